//! Optimality criteria on global and local information matrices.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{check_probability, info_sum, AgentProfile, DesignSpace, Pooled};
use crate::error::{Error, Result};
use crate::linalg;

/// Scalarization of the inverse information matrix.
///
/// `V` carries optional weights over the relevant point set (all points for
/// global use, the agent's group for local use); `None` means uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CriterionKind {
    D,
    A,
    E,
    G,
    V(Option<Vec<f64>>),
}

impl CriterionKind {
    pub fn is_d(&self) -> bool {
        matches!(self, CriterionKind::D)
    }

    pub fn tag(&self) -> &'static str {
        match self {
            CriterionKind::D => "D",
            CriterionKind::A => "A",
            CriterionKind::E => "E",
            CriterionKind::G => "G",
            CriterionKind::V(_) => "V",
        }
    }
}

/// A criterion value, or the marker for a singular information matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriterionValue {
    Finite(f64),
    Infeasible,
}

impl CriterionValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            CriterionValue::Finite(v) => Some(v),
            CriterionValue::Infeasible => None,
        }
    }

    pub fn is_feasible(self) -> bool {
        matches!(self, CriterionValue::Finite(_))
    }

    /// The value as a float, with −∞ for the infeasible marker.
    pub fn or_neg_inf(self) -> f64 {
        self.finite().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn map(self, f: impl FnOnce(f64) -> f64) -> CriterionValue {
        match self {
            CriterionValue::Finite(v) => CriterionValue::Finite(f(v)),
            CriterionValue::Infeasible => CriterionValue::Infeasible,
        }
    }
}

impl PartialOrd for CriterionValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        use CriterionValue::*;
        match (self, other) {
            (Infeasible, Infeasible) => Some(Ordering::Equal),
            (Infeasible, Finite(_)) => Some(Ordering::Less),
            (Finite(_), Infeasible) => Some(Ordering::Greater),
            (Finite(a), Finite(b)) => a.partial_cmp(b),
        }
    }
}

fn v_weights(p: &Option<Vec<f64>>, m: usize) -> Vec<f64> {
    match p {
        Some(p) => p.clone(),
        None => vec![1.0 / m as f64; m],
    }
}

fn quad(z: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (z.transpose() * m * z)[(0, 0)]
}

/// Criterion value of an information matrix, with `points` the set the
/// G and V forms range over (in the same coordinates as `info`).
pub fn criterion_value(kind: &CriterionKind, info: &DMatrix<f64>, points: &[DVector<f64>]) -> CriterionValue {
    if let CriterionKind::D = kind {
        return match linalg::spd_logdet(info) {
            Some(v) => CriterionValue::Finite(v),
            None => CriterionValue::Infeasible,
        };
    }
    let Some(inv) = linalg::spd_inverse(info) else {
        return CriterionValue::Infeasible;
    };
    let v = match kind {
        CriterionKind::D => unreachable!(),
        CriterionKind::A => -inv.trace(),
        CriterionKind::E => -linalg::sym_eigen(&inv).eigenvalues.max(),
        CriterionKind::G => -points.iter().map(|z| quad(z, &inv)).fold(f64::NEG_INFINITY, f64::max),
        CriterionKind::V(p) => {
            let p = v_weights(p, points.len());
            -points.iter().zip(&p).map(|(z, pj)| pj * quad(z, &inv)).sum::<f64>()
        }
    };
    CriterionValue::Finite(v)
}

/// Derivative (or a supergradient for E and G) of the criterion with
/// respect to the information matrix.
pub(crate) fn criterion_info_gradient(
    kind: &CriterionKind,
    info: &DMatrix<f64>,
    points: &[DVector<f64>],
) -> Option<DMatrix<f64>> {
    let inv = linalg::spd_inverse(info)?;
    let g = match kind {
        CriterionKind::D => inv,
        CriterionKind::A => &inv * &inv,
        CriterionKind::E => {
            let eig = linalg::sym_eigen(info);
            let j = eig.eigenvalues.imin();
            let lam = eig.eigenvalues[j];
            let v = eig.eigenvectors.column(j);
            (v * v.transpose()) / (lam * lam)
        }
        CriterionKind::G => {
            let (best, _) = points
                .iter()
                .enumerate()
                .map(|(j, z)| (j, quad(z, &inv)))
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let y = &inv * &points[best];
            &y * y.transpose()
        }
        CriterionKind::V(p) => {
            let p = v_weights(p, points.len());
            let r = info.nrows();
            let mut s = DMatrix::zeros(r, r);
            for (z, pj) in points.iter().zip(&p) {
                s.ger(*pj, z, z, 1.0);
            }
            &inv * s * &inv
        }
    };
    Some(linalg::symmetrize(&g))
}

pub fn eval_global(kind: &CriterionKind, space: &DesignSpace, pi: &[f64]) -> Result<CriterionValue> {
    if pi.len() != space.n_points() {
        return Err(Error::DimensionMismatch { expected: space.n_points(), got: pi.len() });
    }
    if let CriterionKind::V(Some(p)) = kind {
        check_probability(p, space.n_points(), "V weights")?;
    }
    let m = info_sum(space, pi);
    Ok(criterion_value(kind, &m, space.points()))
}

pub fn eval_local(agent: &AgentProfile, space: &DesignSpace, w: &[f64]) -> Result<CriterionValue> {
    if w.len() != space.n_points() {
        return Err(Error::DimensionMismatch { expected: space.n_points(), got: w.len() });
    }
    let pooled = Pooled::new(space, w);
    Ok(local_value(agent, space, &pooled))
}

pub(crate) fn local_value(agent: &AgentProfile, space: &DesignSpace, pooled: &Pooled) -> CriterionValue {
    match pooled.local(agent.basis()) {
        Some(local) => criterion_value(agent.criterion(), &local, &agent.projected_points(space)),
        None => CriterionValue::Infeasible,
    }
}

/// ∂/∂wᵢ of the D-local value for an own point i: xᵢᵀ M(w)⁻¹ xᵢ.
pub fn d_local_gradient(agent: &AgentProfile, space: &DesignSpace, w: &[f64], i: usize) -> Result<f64> {
    if !agent.contains(i) {
        return Err(Error::Validation(format!("point {i} is not in the group of agent {}", agent.index())));
    }
    let m = info_sum(space, w);
    let inv = linalg::spd_inverse(&m).ok_or(Error::SingularM)?;
    Ok(quad(space.point(i), &inv))
}

/// ∂/∂wᵢ of −log det(Aᵀ M(w)⁻¹ A) for any point i.
pub fn d_a_gradient(basis: &DMatrix<f64>, space: &DesignSpace, w: &[f64], i: usize) -> Result<f64> {
    let m = info_sum(space, w);
    let inv = linalg::spd_inverse(&m).ok_or(Error::SingularM)?;
    let b = basis.transpose() * &inv * basis;
    let binv = linalg::spd_inverse(&b).ok_or(Error::SingularM)?;
    let y = basis.transpose() * (&inv * space.point(i));
    Ok(quad(&y, &binv))
}

/// ∂/∂wᵢ of the agent's local criterion (any kind) via the chain rule
/// through M^(k)(w). For E and G this is a supergradient.
pub fn local_gradient(agent: &AgentProfile, space: &DesignSpace, w: &[f64], i: usize) -> Result<f64> {
    let pooled = Pooled::new(space, w);
    local_gradient_with(agent, space, &pooled, i)
}

pub(crate) fn local_gradient_with(agent: &AgentProfile, space: &DesignSpace, pooled: &Pooled, i: usize) -> Result<f64> {
    let x = space.point(i);
    let in_range = {
        let r = &pooled.range;
        let resid = x - r * (r.transpose() * x);
        resid.amax() <= 1e-8 * x.amax()
    };
    if !in_range {
        return Err(Error::SingularM);
    }
    let local = pooled.local(agent.basis()).ok_or(Error::Singular(agent.index()))?;
    let grad = criterion_info_gradient(agent.criterion(), &local, &agent.projected_points(space))
        .ok_or(Error::Singular(agent.index()))?;
    let y = &local * (agent.basis().transpose() * (&pooled.pinv * x));
    Ok(quad(&y, &grad))
}
