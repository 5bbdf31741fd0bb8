//! Post-hoc analyses of designs and equilibria: efficiency, free riding,
//! social good and price of anarchy, fairness, and a Monte-Carlo check of
//! the prediction-error model.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::concave::{projected_newton, subspace_terms, Smooth};
use crate::criteria::CriterionValue;
use crate::design::{info_sum, AgentProfile, DesignSpace};
use crate::error::{Error, Result};
use crate::game::{GameConfig, SUPPORT_THRESHOLD};
use crate::linalg;
use crate::mechanism::{check_agents, effective_utility, solve_w_max, MechanismSpec};
use crate::solver::{benefit_from_collaboration, solve_local_theta};

/// Largest max-abs gap between information matrices still counted as
/// proportional.
pub const EFFICIENCY_TOLERANCE: f64 = 1e-3;

/// Mass slack allowed by the fairness ordering.
pub const FAIRNESS_TOLERANCE: f64 = 1e-9;

/// Largest coordinate spread still counted as identical points.
pub const EXCHANGEABLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub is_proportional_to_pi_star: bool,
    /// ‖M(w/‖w‖₁) − M(π*)‖∞.
    pub matrix_gap: f64,
}

/// Compares the normalized design's information matrix with that of π*.
pub fn efficiency_check(space: &DesignSpace, w: &[f64], pi_star: &[f64]) -> Result<Efficiency> {
    let n = space.n_points();
    for len in [w.len(), pi_star.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let mass: f64 = w.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    let normalized: Vec<f64> = w.iter().map(|x| x / mass).collect();
    let gap = linalg::max_abs(&(info_sum(space, &normalized) - info_sum(space, pi_star)));
    Ok(Efficiency { is_proportional_to_pi_star: gap <= EFFICIENCY_TOLERANCE, matrix_gap: gap })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeRider {
    pub agent: usize,
    pub mass: f64,
}

/// Agents whose block mass is below the support threshold.
pub fn free_riders(space: &DesignSpace, w: &[f64]) -> Result<Vec<FreeRider>> {
    if w.len() != space.n_points() {
        return Err(Error::DimensionMismatch { expected: space.n_points(), got: w.len() });
    }
    Ok((0..space.n_agents())
        .map(|k| FreeRider { agent: k, mass: space.group(k).iter().map(|&i| w[i]).sum() })
        .filter(|f| f.mass < SUPPORT_THRESHOLD)
        .collect())
}

/// Sum of the agents' utilities under the mechanism; `Infeasible` as soon
/// as one of them is.
pub fn social_good(
    space: &DesignSpace,
    agents: &[AgentProfile],
    mech: &MechanismSpec,
    w: &[f64],
) -> Result<CriterionValue> {
    check_agents(space, agents)?;
    let mut total = 0.0;
    for agent in agents {
        match effective_utility(mech, agent, space, w)? {
            CriterionValue::Finite(u) => total += u,
            other => return Ok(other),
        }
    }
    Ok(CriterionValue::Finite(total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceOfAnarchy {
    /// max_w SG(w) / SG(w_max).
    pub ratio: f64,
    pub optimal_social_good: f64,
    pub strategic_social_good: f64,
    pub optimizer: Vec<f64>,
    pub w_max: Vec<f64>,
    /// Σ_k (θ^(k) + r_k log(r_k/c^(k)) − r_k).
    pub bound_denominator: f64,
    /// Upper bound on the ratio; absent when its denominator is not
    /// positive.
    pub bound: Option<f64>,
}

/// Price of anarchy of the information-maximizing mechanism and its
/// collaboration-benefit bound. D agents only.
///
/// Raising any coordinate below w_max to w_max costs its owner exactly what
/// the mechanism's penalty gives back while every log det grows, so the
/// social optimum lies in {w ≥ w_max} where the penalty vanishes and the
/// social good is smooth and concave.
pub fn price_of_anarchy(space: &DesignSpace, agents: &[AgentProfile]) -> Result<PriceOfAnarchy> {
    let wm = solve_w_max(space, agents)?;
    let mech = MechanismSpec::InfoMax { w_max: wm.w.clone() };
    let strategic = social_good(space, agents, &mech, &wm.w)?
        .finite()
        .ok_or_else(|| Error::Validation("social good is undefined at w_max".into()))?;

    let owner_cost: Vec<f64> = (0..space.n_points()).map(|i| agents[space.owner(i)].cost()).collect();
    let eval = |z: &[f64]| -> Option<Smooth> {
        let w: Vec<f64> = z.iter().zip(&wm.w).map(|(a, b)| a + b).collect();
        let inv = linalg::spd_inverse(&info_sum(space, &w))?;
        let n = w.len();
        let mut total = Smooth { value: 0.0, grad: vec![0.0; n], hess: DMatrix::zeros(n, n) };
        for agent in agents {
            let local = subspace_terms(space, &inv, agent.basis())?;
            total.value += local.value;
            total.hess += local.hess;
            for (t, g) in total.grad.iter_mut().zip(&local.grad) {
                *t += g;
            }
        }
        for ((t, x), c) in total.grad.iter_mut().zip(&w).zip(&owner_cost) {
            total.value -= c * x;
            *t -= c;
        }
        Some(total)
    };
    let max_iter = 500;
    let (z, iters) =
        projected_newton(&eval, &vec![0.0; space.n_points()], &vec![false; space.n_points()], 1e-11, max_iter)?;
    if iters >= max_iter {
        return Err(Error::NotConverged("social-good maximization".into()));
    }
    let optimizer: Vec<f64> = z.iter().zip(&wm.w).map(|(a, b)| a + b).collect();
    let optimal = social_good(space, agents, &mech, &optimizer)?.or_neg_inf().max(strategic);

    let total_rank: f64 = agents.iter().map(|a| a.rank() as f64).sum();
    let cheapest = agents.iter().map(|a| a.cost()).fold(f64::INFINITY, f64::min);
    let mut denominator = 0.0;
    let mut diversity = 0.0;
    let mut heterogeneity = 0.0;
    for agent in agents {
        let r = agent.rank() as f64;
        let c = agent.cost();
        denominator += solve_local_theta(agent, space)? + r * (r / c).ln() - r;
        diversity += benefit_from_collaboration(agent, space)?;
        heterogeneity += r * (c * total_rank / (r * cheapest)).ln() - (c - cheapest) * agent.block_mass(&wm.w);
    }
    let bound = (denominator > 0.0).then(|| (diversity + heterogeneity) / denominator + 1.0);
    Ok(PriceOfAnarchy {
        ratio: optimal / strategic,
        optimal_social_good: optimal,
        strategic_social_good: strategic,
        optimizer,
        w_max: wm.w,
        bound_denominator: denominator,
        bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessPair {
    pub k: usize,
    pub l: usize,
    pub utilities: (f64, f64),
    pub masses: (f64, f64),
    /// The agent with the weakly higher utility holds less mass.
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub pairs: Vec<FairnessPair>,
}

impl FairnessReport {
    pub fn violations(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().filter(|p| p.violated).map(|p| (p.k, p.l)).collect()
    }
}

/// Checks that utility order implies mass order for every pair of agents,
/// in a game whose design points are all identical.
pub fn fairness_check(config: &GameConfig, w: &[f64]) -> Result<FairnessReport> {
    let space = &config.space;
    if w.len() != space.n_points() {
        return Err(Error::DimensionMismatch { expected: space.n_points(), got: w.len() });
    }
    let first = space.point(0);
    if space.points().iter().any(|x| (x - first).amax() > EXCHANGEABLE_TOLERANCE) {
        return Err(Error::NotExchangeable);
    }
    let k_count = space.n_agents();
    let utility: Vec<f64> = (0..k_count).map(|k| config.utility(k, w)).collect();
    let mass: Vec<f64> = config.agents.iter().map(|a| a.block_mass(w)).collect();
    let mut pairs = Vec::new();
    for k in 0..k_count {
        for l in k + 1..k_count {
            let breaks = |a: usize, b: usize| utility[a] >= utility[b] && mass[a] < mass[b] - FAIRNESS_TOLERANCE;
            pairs.push(FairnessPair {
                k,
                l,
                utilities: (utility[k], utility[l]),
                masses: (mass[k], mass[l]),
                violated: breaks(k, l) || breaks(l, k),
            });
        }
    }
    Ok(FairnessReport { pairs })
}

/// Integer replication counts summing to `m`, by largest-remainder
/// rounding of m·π (ties to the lower index).
pub fn round_design(pi: &[f64], m: usize) -> Result<Vec<usize>> {
    let total: f64 = pi.iter().sum();
    if pi.iter().any(|p| !p.is_finite() || *p < 0.0) || !(total > 0.0) {
        return Err(Error::Validation("design must be nonnegative with positive mass".into()));
    }
    let scaled: Vec<f64> = pi.iter().map(|p| p / total * m as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(m.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    pub direction: Vec<f64>,
    /// Mean over trials of m·(xᵀ(θ̂ − θ))².
    pub estimate: f64,
    /// xᵀ M(π)⁻¹ x.
    pub limit: f64,
    pub relative_error: f64,
}

/// Simulates least-squares fits on the exact design obtained by rounding
/// m·π and compares the scaled squared prediction error in each direction
/// with its asymptotic value. Each trial draws from its own stream of the
/// seeded generator.
pub fn monte_carlo_prediction_error(
    space: &DesignSpace,
    pi: &[f64],
    m: usize,
    trials: usize,
    seed: u64,
    directions: &[DVector<f64>],
) -> Result<Vec<PredictionError>> {
    if pi.len() != space.n_points() {
        return Err(Error::DimensionMismatch { expected: space.n_points(), got: pi.len() });
    }
    if trials == 0 || m == 0 {
        return Err(Error::Validation("need at least one trial and one sample".into()));
    }
    for x in directions {
        if x.len() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), got: x.len() });
        }
    }
    let total: f64 = pi.iter().sum();
    let normalized: Vec<f64> = pi.iter().map(|p| p / total).collect();
    let limit_inv = linalg::spd_inverse(&info_sum(space, &normalized)).ok_or(Error::SingularM)?;
    let counts = round_design(pi, m)?;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let gram = info_sum(space, &exact).cholesky().ok_or(Error::SingularM)?;

    let d = space.dim();
    let mut base = ChaCha8Rng::seed_from_u64(seed);
    let theta = DVector::from_fn(d, |_, _| base.sample::<f64, _>(StandardNormal));
    let mut sums = vec![0.0; directions.len()];
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        let mut moment = DVector::zeros(d);
        for (x, &count) in space.points().iter().zip(&counts) {
            let mean = x.dot(&theta);
            let response: f64 = (0..count).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).sum();
            moment += x * response;
        }
        let err = gram.solve(&moment) - &theta;
        for (s, x) in sums.iter_mut().zip(directions) {
            *s += m as f64 * x.dot(&err).powi(2);
        }
    }
    Ok(directions
        .iter()
        .zip(sums)
        .map(|(x, s)| {
            let estimate = s / trials as f64;
            let limit = (x.transpose() * &limit_inv * x)[(0, 0)];
            PredictionError {
                direction: x.iter().cloned().collect(),
                estimate,
                limit,
                relative_error: (estimate - limit).abs() / limit,
            }
        })
        .collect())
}

/// Everything the analyses report about one design.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<Efficiency>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub free_riders: Option<Vec<FreeRider>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub social_good: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_of_anarchy: Option<PriceOfAnarchy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fairness: Option<FairnessReport>,
}
