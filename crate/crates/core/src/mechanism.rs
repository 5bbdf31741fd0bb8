//! The four contribution mechanisms, the quantities they publish, and the
//! utilities agents enjoy under them.
//!
//! Every mechanism hands agent k the pooled design scaled by a factor in
//! (0, 1]. Internally the factor is carried as a log-penalty p = −log factor,
//! which is piecewise linear in the agent's own block.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ascent::{self, Objective};
use crate::concave::{self, Smooth};
use crate::criteria::{eval_local, CriterionKind, CriterionValue};
use crate::design::{check_probability, info_sum, AgentProfile, DesignSpace};
use crate::error::{Error, Result};
use crate::linalg;
use crate::solver::{local_d_optimal, solve_optimal_design, SolverOptions};

/// A mechanism together with its published parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum MechanismSpec {
    #[serde(rename = "fed")]
    Fed,
    #[serde(rename = "infomax")]
    InfoMax { w_max: Vec<f64> },
    #[serde(rename = "pureeff")]
    PureEff { pi_star: Vec<f64> },
    #[serde(rename = "eff")]
    Eff { pi_star: Vec<f64>, n_max: f64 },
}

/// Mechanism names without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Fed,
    InfoMax,
    PureEff,
    Eff,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 4] =
        [MechanismKind::Fed, MechanismKind::InfoMax, MechanismKind::PureEff, MechanismKind::Eff];

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Fed => "fed",
            MechanismKind::InfoMax => "infomax",
            MechanismKind::PureEff => "pureeff",
            MechanismKind::Eff => "eff",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MechanismKind::ALL.into_iter().find(|k| k.name() == s.to_ascii_lowercase()).ok_or_else(|| {
            Error::Validation(format!("unknown mechanism `{s}` (expected fed, infomax, pureeff or eff)"))
        })
    }
}

impl MechanismSpec {
    pub fn kind(&self) -> MechanismKind {
        match self {
            MechanismSpec::Fed => MechanismKind::Fed,
            MechanismSpec::InfoMax { .. } => MechanismKind::InfoMax,
            MechanismSpec::PureEff { .. } => MechanismKind::PureEff,
            MechanismSpec::Eff { .. } => MechanismKind::Eff,
        }
    }

    /// Checks parameter shapes against the space.
    pub fn validate(&self, space: &DesignSpace) -> Result<()> {
        let n = space.n_points();
        match self {
            MechanismSpec::Fed => Ok(()),
            MechanismSpec::InfoMax { w_max } => {
                if w_max.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: w_max.len() });
                }
                if w_max.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::Validation("w_max entries must be finite and nonnegative".into()));
                }
                Ok(())
            }
            MechanismSpec::PureEff { pi_star } => check_probability(pi_star, n, "pi_star"),
            MechanismSpec::Eff { pi_star, n_max } => {
                check_probability(pi_star, n, "pi_star")?;
                if !(n_max.is_finite() && *n_max >= 0.0) {
                    return Err(Error::Validation("n_max must be finite and nonnegative".into()));
                }
                Ok(())
            }
        }
    }

    /// Computes and publishes the parameters of a mechanism for a game.
    pub fn publish(kind: MechanismKind, space: &DesignSpace, agents: &[AgentProfile]) -> Result<Self> {
        match kind {
            MechanismKind::Fed => Ok(MechanismSpec::Fed),
            MechanismKind::InfoMax => Ok(MechanismSpec::InfoMax { w_max: solve_w_max(space, agents)?.w }),
            MechanismKind::PureEff => Ok(MechanismSpec::PureEff { pi_star: published_pi_star(space)? }),
            MechanismKind::Eff => {
                let pi_star = published_pi_star(space)?;
                let n_max = solve_n_max(space, agents, &pi_star)?;
                Ok(MechanismSpec::Eff { pi_star, n_max })
            }
        }
    }
}

/// Certified D-optimal design used as the efficiency target.
pub fn published_pi_star(space: &DesignSpace) -> Result<Vec<f64>> {
    let o = solve_optimal_design(&CriterionKind::D, space, None, &SolverOptions::tight())?;
    if !o.converged {
        return Err(Error::NotConverged("D-optimal design".into()));
    }
    Ok(o.pi)
}

/// Best utility an agent can reach alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandaloneValue {
    pub value: f64,
    /// Total weight of the maximizing block.
    pub argmass: f64,
    /// Maximizing measure over all points (zero outside the group).
    pub arg: Vec<f64>,
}

pub fn standalone_value(agent: &AgentProfile, space: &DesignSpace) -> Result<StandaloneValue> {
    let c = agent.cost();
    if c <= 0.0 {
        return Err(Error::Unsupported(format!(
            "agent {} has zero cost, so its standalone utility is unbounded",
            agent.index()
        )));
    }
    if agent.criterion().is_d() {
        let local = local_d_optimal(agent, space)?;
        let r = agent.rank() as f64;
        let scale = r / c;
        let arg: Vec<f64> = local.pi.iter().map(|p| p * scale).collect();
        return Ok(StandaloneValue { value: local.value + r * scale.ln() - r, argmass: scale, arg });
    }
    standalone_numeric(agent, space)
}

/// Maximizes the agent's utility with nobody else contributing, from three
/// starting blocks.
fn standalone_numeric(agent: &AgentProfile, space: &DesignSpace) -> Result<StandaloneValue> {
    let n = space.n_points();
    let fed = MechanismSpec::Fed;
    let objective = Objective::new(space, agent, &fed);
    let seed = ascent::feasibility_seed(agent, space)?;
    let m = agent.group().len() as f64;
    let total: f64 = seed.iter().sum();
    let mut starts = vec![seed.clone(); 3];
    for &i in agent.group() {
        starts[1][i] = total / m;
        starts[2][i] = 0.5 * (seed[i] + total / m);
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let out = ascent::ascend_block(&objective, &start, None, 1e-10, 5_000)?;
        let v = objective.value(&out.w);
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, out.w));
        }
    }
    let (value, arg) = best.expect("three starts");
    debug_assert_eq!(arg.len(), n);
    Ok(StandaloneValue { value, argmass: agent.block_mass(&arg), arg })
}

/// Sums of π* and w over the complement of the agent's group.
fn outside(agent: &AgentProfile, pi: &[f64], w: &[f64]) -> (f64, f64) {
    let mut pi_out = 0.0;
    let mut w_out = 0.0;
    for (i, (p, x)) in pi.iter().zip(w).enumerate() {
        if !agent.contains(i) {
            pi_out += p;
            w_out += x;
        }
    }
    (pi_out, w_out)
}

/// −log of the scaling factor the mechanism applies for agent k; infinite
/// when the Eff mechanism sees weight on a point π* ignores.
pub fn log_penalty(mech: &MechanismSpec, agent: &AgentProfile, space: &DesignSpace, w: &[f64]) -> Result<f64> {
    if w.len() != space.n_points() {
        return Err(Error::DimensionMismatch { expected: space.n_points(), got: w.len() });
    }
    let r = agent.rank() as f64;
    let c = agent.cost();
    let g = agent.group();
    Ok(match mech {
        MechanismSpec::Fed => 0.0,
        MechanismSpec::InfoMax { w_max } => c / r * g.iter().map(|&i| (w_max[i] - w[i]).max(0.0)).sum::<f64>(),
        MechanismSpec::PureEff { pi_star } => {
            let (pi_out, w_out) = outside(agent, pi_star, w);
            if w_out <= 0.0 {
                return Err(Error::DegenerateOutsideMass(agent.index()));
            }
            let s: f64 = g.iter().map(|&i| w[i]).sum();
            let pi_in: f64 = g.iter().map(|&i| pi_star[i]).sum();
            space.dim() as f64 / r * (pi_out * s / w_out - pi_in).max(0.0)
        }
        MechanismSpec::Eff { pi_star, n_max } => {
            let (pi_out, w_out) = outside(agent, pi_star, w);
            if w_out <= 0.0 {
                return Err(Error::DegenerateOutsideMass(agent.index()));
            }
            let shortfall: f64 = g.iter().map(|&i| (n_max * pi_star[i] - w[i]).max(0.0)).sum();
            let mut excess = 0.0;
            for &i in g {
                let p = pi_star[i];
                if p == 0.0 {
                    if w[i] > 0.0 {
                        return Ok(f64::INFINITY);
                    }
                } else if w[i] >= n_max * p {
                    excess += (pi_out * w[i] / (w_out * p) - 1.0).max(0.0);
                }
            }
            c / r * shortfall + excess
        }
    })
}

/// Values t at which the log-penalty along w + t·v changes slope or jumps;
/// `v` must vanish outside the agent's group.
pub(crate) fn penalty_breakpoints(mech: &MechanismSpec, agent: &AgentProfile, w: &[f64], v: &[f64]) -> Vec<f64> {
    let g = agent.group();
    let mut out = Vec::new();
    let mut crossing = |target: f64, i: usize| {
        if v[i] != 0.0 {
            out.push((target - w[i]) / v[i]);
        }
    };
    match mech {
        MechanismSpec::Fed => {}
        MechanismSpec::InfoMax { w_max } => {
            for &i in g {
                crossing(w_max[i], i);
            }
        }
        MechanismSpec::PureEff { pi_star } => {
            let (pi_out, w_out) = outside(agent, pi_star, w);
            let dv: f64 = g.iter().map(|&i| v[i]).sum();
            if pi_out > 0.0 && dv != 0.0 {
                let s: f64 = g.iter().map(|&i| w[i]).sum();
                let pi_in: f64 = g.iter().map(|&i| pi_star[i]).sum();
                out.push((pi_in * w_out / pi_out - s) / dv);
            }
        }
        MechanismSpec::Eff { pi_star, n_max } => {
            let (pi_out, w_out) = outside(agent, pi_star, w);
            for &i in g {
                let p = pi_star[i];
                crossing(n_max * p, i);
                if p > 0.0 && pi_out > 0.0 {
                    crossing(w_out * p / pi_out, i);
                }
            }
        }
    }
    out.retain(|t| t.is_finite());
    out
}

/// Derivative of the log-penalty along `v` at a point `w` strictly inside
/// one of its linear pieces.
pub(crate) fn penalty_slope(
    mech: &MechanismSpec,
    agent: &AgentProfile,
    space: &DesignSpace,
    w: &[f64],
    v: &[f64],
) -> f64 {
    let r = agent.rank() as f64;
    let c = agent.cost();
    let g = agent.group();
    match mech {
        MechanismSpec::Fed => 0.0,
        MechanismSpec::InfoMax { w_max } => -c / r * g.iter().filter(|&&i| w[i] < w_max[i]).map(|&i| v[i]).sum::<f64>(),
        MechanismSpec::PureEff { pi_star } => {
            let (pi_out, w_out) = outside(agent, pi_star, w);
            let s: f64 = g.iter().map(|&i| w[i]).sum();
            let pi_in: f64 = g.iter().map(|&i| pi_star[i]).sum();
            if w_out > 0.0 && pi_out * s / w_out - pi_in > 0.0 {
                let dv: f64 = g.iter().map(|&i| v[i]).sum();
                space.dim() as f64 / r * pi_out * dv / w_out
            } else {
                0.0
            }
        }
        MechanismSpec::Eff { pi_star, n_max } => {
            let (pi_out, w_out) = outside(agent, pi_star, w);
            let mut slope = 0.0;
            for &i in g {
                let p = pi_star[i];
                if w[i] < n_max * p {
                    slope -= c / r * v[i];
                } else if p > 0.0 && w_out > 0.0 && pi_out * w[i] / (w_out * p) > 1.0 {
                    slope += pi_out * v[i] / (w_out * p);
                }
            }
            slope
        }
    }
}

/// Combines an unscaled local criterion value `f`, a log-penalty and the
/// agent's spend into its utility.
///
/// For D the scaling shifts log det by r·log(factor); the other criteria
/// are homogeneous of degree −1 in the information matrix.
pub(crate) fn combine(agent: &AgentProfile, f: f64, penalty: f64, mass: f64) -> f64 {
    if !f.is_finite() || penalty.is_infinite() {
        return f64::NEG_INFINITY;
    }
    let spend = agent.cost() * mass;
    if agent.criterion().is_d() {
        f - agent.rank() as f64 * penalty - spend
    } else {
        f * penalty.exp() - spend
    }
}

/// Scaling factor in (0, 1] the mechanism applies to agent k's view of w.
pub fn scaling_factor(mech: &MechanismSpec, agent: &AgentProfile, space: &DesignSpace, w: &[f64]) -> Result<f64> {
    Ok((-log_penalty(mech, agent, space, w)?).exp())
}

/// Agent k's utility under the mechanism; `Infeasible` when its subspace is
/// not identified or the mechanism's ratio is undefined.
pub fn effective_utility(
    mech: &MechanismSpec,
    agent: &AgentProfile,
    space: &DesignSpace,
    w: &[f64],
) -> Result<CriterionValue> {
    let f = eval_local(agent, space, w)?;
    let Some(f) = f.finite() else {
        return Ok(CriterionValue::Infeasible);
    };
    let p = match log_penalty(mech, agent, space, w) {
        Ok(p) => p,
        Err(Error::DegenerateOutsideMass(_)) => return Ok(CriterionValue::Infeasible),
        Err(e) => return Err(e),
    };
    let u = combine(agent, f, p, agent.block_mass(w));
    Ok(if u.is_finite() { CriterionValue::Finite(u) } else { CriterionValue::Infeasible })
}

/// Plain utility with no mechanism.
pub fn plain_utility(agent: &AgentProfile, space: &DesignSpace, w: &[f64]) -> Result<CriterionValue> {
    effective_utility(&MechanismSpec::Fed, agent, space, w)
}

/// The information-maximizing design with its IR multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxInformation {
    pub w: Vec<f64>,
    pub log_det: f64,
    /// Multipliers of the individual-rationality constraints.
    pub multipliers: Vec<f64>,
    /// u^(k)(w) − v*^(k) per agent.
    pub ir_slack: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Derivatives of log det M(w) and of each agent's IR margin.
struct IrState {
    f: f64,
    grad_f: Vec<f64>,
    hess_f: DMatrix<f64>,
    g: Vec<f64>,
    grad_g: Vec<Vec<f64>>,
    hess_g: Vec<DMatrix<f64>>,
}

fn ir_state(space: &DesignSpace, agents: &[AgentProfile], standalone: &[f64], w: &[f64]) -> Option<IrState> {
    let m = info_sum(space, w);
    let inv = linalg::spd_inverse(&m)?;
    let total = concave::logdet_terms(space, linalg::spd_logdet(&m)?, &inv);
    let mut g = Vec::with_capacity(agents.len());
    let mut grad_g = Vec::with_capacity(agents.len());
    let mut hess_g = Vec::with_capacity(agents.len());
    for (agent, v) in agents.iter().zip(standalone) {
        let local = concave::subspace_terms(space, &inv, agent.basis())?;
        let mut grad = local.grad;
        for &i in agent.group() {
            grad[i] -= agent.cost();
        }
        g.push(local.value - agent.cost() * agent.block_mass(w) - v);
        grad_g.push(grad);
        hess_g.push(local.hess);
    }
    Some(IrState { f: total.value, grad_f: total.grad, hess_f: total.hess, g, grad_g, hess_g })
}

/// Maximizes log det M(w) over w ≥ 0 subject to every agent keeping at
/// least its standalone utility.
///
/// Augmented-Lagrangian outer loop with projected Newton inner solves. The
/// start, the concatenation of the standalone maximizers, is feasible.
pub fn solve_w_max(space: &DesignSpace, agents: &[AgentProfile]) -> Result<MaxInformation> {
    check_agents(space, agents)?;
    if let Some(a) = agents.iter().find(|a| !a.criterion().is_d()) {
        return Err(Error::Unsupported(format!("w_max needs the D criterion (agent {})", a.index())));
    }
    let n = space.n_points();
    let mut w = vec![0.0; n];
    let mut standalone = Vec::with_capacity(agents.len());
    for agent in agents {
        let s = standalone_value(agent, space)?;
        for &i in agent.group() {
            w[i] = s.arg[i];
        }
        standalone.push(s.value);
    }
    // An agent whose subspace meets the others' span only at zero gains
    // nothing from them: its constraint holds exactly at its standalone
    // block, which is therefore fixed.
    let k = agents.len();
    let isolated: Vec<bool> = agents.iter().map(|a| isolated(space, a)).collect();
    let fixed: Vec<bool> = (0..n).map(|i| isolated[space.owner(i)]).collect();
    let mut lambda = vec![0.0; k];
    let mut rho = 10.0;
    let mut last_violation = f64::INFINITY;
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64, f64)> = None;
    let violation_of =
        |s: &IrState| s.g.iter().zip(&isolated).filter(|(_, &iso)| !iso).fold(0.0f64, |a, (&g, _)| a.max(-g));
    if isolated.iter().all(|&iso| iso) {
        let state = ir_state(space, agents, &standalone, &w).ok_or(Error::SingularM)?;
        return Ok(max_information(w, state, lambda, 0.0, 0));
    }
    for _outer in 0..60 {
        let lagrangian = |w: &[f64]| -> Option<Smooth> {
            let s = ir_state(space, agents, &standalone, w)?;
            let mut value = s.f;
            let mut grad = s.grad_f.clone();
            let mut hess = s.hess_f.clone();
            for j in (0..k).filter(|&j| !isolated[j]) {
                let mu = (lambda[j] - rho * s.g[j]).max(0.0);
                value -= (mu * mu - lambda[j] * lambda[j]) / (2.0 * rho);
                if mu > 0.0 {
                    let dg = DVector::from_column_slice(&s.grad_g[j]);
                    hess += &s.hess_g[j] * mu - &dg * dg.transpose() * rho;
                    for (gi, d) in grad.iter_mut().zip(&s.grad_g[j]) {
                        *gi += mu * d;
                    }
                }
            }
            Some(Smooth { value, grad, hess })
        };
        let (next, inner_iters) = concave::projected_newton(&lagrangian, &w, &fixed, 1e-12, 200)?;
        iterations += inner_iters;
        w = next;
        let state = ir_state(space, agents, &standalone, &w).ok_or(Error::SingularM)?;
        for j in (0..k).filter(|&j| !isolated[j]) {
            lambda[j] = (lambda[j] - rho * state.g[j]).max(0.0);
        }
        let violation = violation_of(&state);
        let complementarity = state.g.iter().zip(&lambda).fold(0.0f64, |a, (g, l)| a.max((g * l).abs()));
        let kkt = lagrangian_residual(&state, &lambda, &w, &fixed);
        if violation <= 1e-9 && complementarity <= 1e-9 && kkt <= 1e-7 {
            return Ok(max_information(w, state, lambda, kkt, iterations));
        }
        let merit = violation.max(complementarity).max(kkt);
        if best.as_ref().is_none_or(|(m, ..)| merit < *m) {
            best = Some((merit, w.clone(), lambda.clone(), violation, kkt));
        }
        // past the inner solver's resolution a larger penalty only adds
        // ill-conditioning
        if violation > 1e-10 && violation > 0.25 * last_violation {
            rho = (rho * 10.0).min(1e8);
        }
        last_violation = violation;
    }
    let (_, w, lambda, violation, kkt) = best.ok_or(Error::SingularM)?;
    if violation <= 1e-8 && kkt <= 1e-6 {
        let state = ir_state(space, agents, &standalone, &w).ok_or(Error::SingularM)?;
        return Ok(max_information(w, state, lambda, kkt, iterations));
    }
    Err(Error::NotConverged(format!("information-maximizing design (IR violation {violation:.2e})")))
}

/// Whether the agent's subspace meets the span of everyone else's points
/// only at zero.
fn isolated(space: &DesignSpace, agent: &AgentProfile) -> bool {
    let others: Vec<usize> = (0..space.n_points()).filter(|&i| !agent.contains(i)).collect();
    if others.is_empty() {
        return true;
    }
    let u = crate::design::orthonormal_basis(space, &others);
    let a = linalg::orthonormal_columns(agent.basis());
    let joint =
        DMatrix::from_columns(&a.column_iter().chain(u.column_iter()).map(|c| c.into_owned()).collect::<Vec<_>>());
    linalg::orthonormal_columns(&joint).ncols() == a.ncols() + u.ncols()
}

fn max_information(w: Vec<f64>, s: IrState, multipliers: Vec<f64>, kkt: f64, iterations: usize) -> MaxInformation {
    MaxInformation { w, log_det: s.f, multipliers, ir_slack: s.g, kkt_residual: kkt, iterations }
}

/// Projected-gradient residual of the Lagrangian ∇f + Σλ∇g on w ≥ 0 over
/// the coordinates that are not fixed.
fn lagrangian_residual(s: &IrState, lambda: &[f64], w: &[f64], fixed: &[bool]) -> f64 {
    let grad: Vec<f64> =
        (0..w.len()).map(|i| s.grad_f[i] + lambda.iter().zip(&s.grad_g).map(|(l, g)| l * g[i]).sum::<f64>()).collect();
    concave::projected_residual(w, &grad, fixed)
}

pub(crate) fn check_agents(space: &DesignSpace, agents: &[AgentProfile]) -> Result<()> {
    if agents.len() != space.n_agents() {
        return Err(Error::Validation(format!("{} agent profiles for {} groups", agents.len(), space.n_agents())));
    }
    for (k, a) in agents.iter().enumerate() {
        if a.index() != k || a.group() != space.group(k) {
            return Err(Error::Validation(format!("agent profile {k} does not match group {k}")));
        }
    }
    Ok(())
}

/// The set {n ≥ 0 : u^(k)(n·π*) ≥ v*^(k)} of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationalInterval {
    pub lo: f64,
    pub hi: f64,
}

/// Individually rational scales of π* per agent.
pub fn rational_intervals(
    space: &DesignSpace,
    agents: &[AgentProfile],
    pi_star: &[f64],
) -> Result<Vec<RationalInterval>> {
    check_agents(space, agents)?;
    check_probability(pi_star, space.n_points(), "pi_star")?;
    agents.iter().map(|a| rational_interval(space, a, pi_star)).collect()
}

fn rational_interval(space: &DesignSpace, agent: &AgentProfile, pi_star: &[f64]) -> Result<RationalInterval> {
    let s = standalone_value(agent, space)?;
    let h = |n: f64| -> f64 {
        let w: Vec<f64> = pi_star.iter().map(|p| p * n).collect();
        plain_utility(agent, space, &w).map(|u| u.or_neg_inf()).unwrap_or(f64::NEG_INFINITY) - s.value
    };
    let share = agent.block_mass(pi_star);
    // known feasible scale: the standalone mass spread like π*
    let n0 = if share > 0.0 { s.argmass / share } else { s.argmass };
    let mut feasible = n0;
    let h0 = h(n0);
    if h0 < -1e-12 * (1.0 + s.value.abs()) {
        // search a coarse grid for any feasible scale
        let found = (1..=200).map(|j| n0 * 1.1f64.powi(j - 100)).find(|&n| h(n) >= 0.0);
        match found {
            Some(n) => feasible = n,
            None => return Err(Error::Infeasible),
        }
    }
    let hi = if share == 0.0 {
        f64::INFINITY
    } else {
        let mut top = feasible.max(1e-300) * 2.0;
        let mut guard = 0;
        while h(top) >= 0.0 {
            top *= 2.0;
            guard += 1;
            if guard > 2000 {
                return Err(Error::NotConverged("upper rational scale".into()));
            }
        }
        bisect_edge(&h, feasible, top)
    };
    let lo = bisect_edge(&h, feasible, 0.0);
    Ok(RationalInterval { lo, hi })
}

/// Boundary between `inside` (h ≥ 0) and `outside` (h < 0) to 1e-8 absolute.
fn bisect_edge(h: &dyn Fn(f64) -> f64, inside: f64, outside: f64) -> f64 {
    let (mut a, mut b) = (inside, outside);
    for _ in 0..500 {
        if (a - b).abs() <= 1e-12 {
            break;
        }
        let m = 0.5 * (a + b);
        if h(m) >= 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    a
}

/// Largest scale of π* keeping every agent individually rational.
pub fn solve_n_max(space: &DesignSpace, agents: &[AgentProfile], pi_star: &[f64]) -> Result<f64> {
    let intervals = rational_intervals(space, agents, pi_star)?;
    let lo = intervals.iter().map(|i| i.lo).fold(0.0f64, f64::max);
    let hi = intervals.iter().map(|i| i.hi).fold(f64::INFINITY, f64::min);
    if lo > hi || !hi.is_finite() {
        return Err(Error::Infeasible);
    }
    Ok(hi)
}

/// Pairwise data-compatibility check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    /// (k, k', holds): agent k' is rational at agent k's standalone scale.
    pub pairs: Vec<(usize, usize, bool)>,
    /// Agents whose group carries no π* mass; their pairs are skipped.
    pub degenerate: Vec<usize>,
}

impl CompatibilityReport {
    pub fn holds(&self) -> bool {
        self.degenerate.is_empty() && self.pairs.iter().all(|p| p.2)
    }

    pub fn violations(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().filter(|p| !p.2).map(|p| (p.0, p.1)).collect()
    }
}

pub fn assumption_check(space: &DesignSpace, agents: &[AgentProfile], pi_star: &[f64]) -> Result<CompatibilityReport> {
    check_agents(space, agents)?;
    check_probability(pi_star, space.n_points(), "pi_star")?;
    let standalone: Vec<StandaloneValue> = agents.iter().map(|a| standalone_value(a, space)).collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    let mut degenerate = Vec::new();
    for (k, agent) in agents.iter().enumerate() {
        let share = agent.block_mass(pi_star);
        if share <= 0.0 {
            degenerate.push(k);
            continue;
        }
        let scale = standalone[k].argmass / share;
        let w: Vec<f64> = pi_star.iter().map(|p| p * scale).collect();
        for (kk, other) in agents.iter().enumerate() {
            let u = plain_utility(other, space, &w)?.or_neg_inf();
            let tol = 1e-9 * (1.0 + standalone[kk].value.abs());
            pairs.push((k, kk, u >= standalone[kk].value - tol));
        }
    }
    Ok(CompatibilityReport { pairs, degenerate })
}
