//! Canonical design spaces and a seeded generator of random ones.

use nalgebra::DVector;
use rand::{seq::SliceRandom, Rng, RngExt};
use rand_distr::StandardNormal;

use crate::design::DesignSpace;
use crate::error::Result;

/// Standard basis of R^d split into the given groups.
pub fn basis(d: usize, groups: Vec<Vec<usize>>) -> Result<DesignSpace> {
    let points = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    DesignSpace::new(points, groups)
}

/// Two agents in the plane: agent 0 holds (cos θ, sin θ), agent 1 holds
/// e1 and e2.
pub fn angle_space(theta: f64) -> Result<DesignSpace> {
    DesignSpace::new(vec![vec![theta.cos(), theta.sin()], vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0], vec![1, 2]])
}

/// Four single-point agents in R³ holding e1, e2, e3 and e2 + e3; the
/// last one free-rides when its cost is at least twice the others'.
pub fn free_riding_space() -> Result<DesignSpace> {
    DesignSpace::new(
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
        vec![vec![0], vec![1], vec![2], vec![3]],
    )
}

/// `agents` agents in R^agents: agent i < agents − 1 holds u·e_{i+1} and
/// the shared feature e_0; the last holds only v·e_0.
pub fn selfish_space(agents: usize, u: f64, v: f64) -> Result<DesignSpace> {
    let d = agents;
    let unit = |j: usize, s: f64| (0..d).map(|t| if t == j { s } else { 0.0 }).collect::<Vec<f64>>();
    let mut points = Vec::new();
    let mut groups = Vec::new();
    for i in 0..agents.saturating_sub(1) {
        groups.push(vec![points.len(), points.len() + 1]);
        points.push(unit(i + 1, u));
        points.push(unit(0, 1.0));
    }
    groups.push(vec![points.len()]);
    points.push(unit(0, v));
    DesignSpace::new(points, groups)
}

/// Two agents holding identical copies of the same full-rank point set.
pub fn twin_space(points: Vec<Vec<f64>>) -> Result<DesignSpace> {
    let n = points.len();
    let mut all = points.clone();
    all.extend(points);
    DesignSpace::new(all, vec![(0..n).collect(), (n..2 * n).collect()])
}

/// Exchangeable regime: `agents` agents each holding the same single
/// point of R¹.
pub fn exchangeable_space(agents: usize) -> Result<DesignSpace> {
    DesignSpace::new(vec![vec![1.0]; agents], (0..agents).map(|k| vec![k]).collect())
}

/// Uniformly random unit vector in R^d.
pub fn unit_vector(rng: &mut impl Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Random space of `n` unit points in R^d spanning R^d, split into
/// `agents` nonempty groups. When `min_rank` is set, redraws until every
/// group spans at least that many dimensions.
pub fn random_space(rng: &mut impl Rng, d: usize, n: usize, agents: usize, min_rank: usize) -> DesignSpace {
    assert!(n >= d && n >= agents && agents >= 1, "need n ≥ d and n ≥ agents");
    loop {
        let points: Vec<DVector<f64>> = (0..n).map(|_| unit_vector(rng, d)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut groups = vec![Vec::new(); agents];
        for (slot, &i) in order.iter().enumerate() {
            let k = if slot < agents { slot } else { rng.random_range(0..agents) };
            groups[k].push(i);
        }
        for g in &mut groups {
            g.sort_unstable();
        }
        if groups.iter().any(|g| g.len() < min_rank) {
            continue;
        }
        if let Ok(space) = DesignSpace::from_vectors(points, groups) {
            let ranks_ok = (0..agents)
                .all(|k| crate::design::orthonormal_basis(&space, space.group(k)).ncols() >= min_rank.min(d));
            if ranks_ok {
                return space;
            }
        }
    }
}
