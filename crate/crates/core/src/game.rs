//! Best responses, best-response dynamics and equilibrium checks.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ascent::{self, Objective};
use crate::design::{info_sum, AgentProfile, DesignSpace};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mechanism::{effective_utility, scaling_factor, standalone_value, MechanismSpec, StandaloneValue};

/// Mass below which a point counts as unused.
pub const SUPPORT_THRESHOLD: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameOptions {
    pub max_rounds: usize,
    /// Weight kept on the previous block when a response is applied.
    pub damping: f64,
    /// First-order tolerance of each best response.
    pub inner_tol: f64,
    /// First-order tolerance of the equilibrium.
    pub outer_tol: f64,
    /// Largest per-round change of w accepted as a fixed point.
    pub step_tol: f64,
    pub seed: u64,
}

impl Default for GameOptions {
    fn default() -> Self {
        GameOptions { max_rounds: 2000, damping: 0.0, inner_tol: 1e-9, outer_tol: 1e-6, step_tol: 1e-8, seed: 0 }
    }
}

/// A game: the space, the agents and the published mechanism.
#[derive(Debug, Clone)]
pub struct GameConfig {
    pub space: DesignSpace,
    pub agents: Vec<AgentProfile>,
    pub mechanism: MechanismSpec,
    pub options: GameOptions,
    standalone: Vec<Option<StandaloneValue>>,
}

impl GameConfig {
    pub fn new(
        space: DesignSpace,
        agents: Vec<AgentProfile>,
        mechanism: MechanismSpec,
        options: GameOptions,
    ) -> Result<Self> {
        if agents.len() != space.n_agents() {
            return Err(Error::Validation(format!("{} agent profiles for {} groups", agents.len(), space.n_agents())));
        }
        for (k, a) in agents.iter().enumerate() {
            if a.index() != k || a.group() != space.group(k) {
                return Err(Error::Validation(format!("agent profile {k} does not match group {k}")));
            }
        }
        if !(options.inner_tol > 0.0 && options.outer_tol > 0.0 && options.step_tol > 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        if !(0.0..1.0).contains(&options.damping) {
            return Err(Error::Validation("damping must lie in [0, 1)".into()));
        }
        mechanism.validate(&space)?;
        let standalone = agents
            .iter()
            .map(|a| match standalone_value(a, &space) {
                Ok(v) => Ok(Some(v)),
                Err(Error::Unsupported(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        Ok(GameConfig { space, agents, mechanism, options, standalone })
    }

    /// Same game under another mechanism.
    pub fn with_mechanism(&self, mechanism: MechanismSpec) -> Result<Self> {
        mechanism.validate(&self.space)?;
        let mut out = self.clone();
        out.mechanism = mechanism;
        Ok(out)
    }

    pub fn with_options(&self, options: GameOptions) -> Self {
        let mut out = self.clone();
        out.options = options;
        out
    }

    /// Standalone value of agent k, `None` for zero-cost agents.
    pub fn standalone(&self, k: usize) -> Option<&StandaloneValue> {
        self.standalone[k].as_ref()
    }

    fn objective(&self, k: usize) -> Objective<'_> {
        Objective::new(&self.space, &self.agents[k], &self.mechanism)
    }

    /// Agent k's utility under the mechanism, −∞ when infeasible.
    pub fn utility(&self, k: usize, w: &[f64]) -> f64 {
        effective_utility(&self.mechanism, &self.agents[k], &self.space, w)
            .map(|u| u.or_neg_inf())
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn check_len(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.space.n_points() {
            return Err(Error::DimensionMismatch { expected: self.space.n_points(), got: w.len() });
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("design weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub utility: f64,
    pub scaling_factor: Option<f64>,
    /// Utility minus standalone value; absent for zero-cost agents.
    pub ir_slack: Option<f64>,
    pub kkt_residual: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub w: Vec<f64>,
    pub agents: Vec<AgentReport>,
    /// log det M(w), −∞ when singular.
    pub total_information: f64,
    pub converged: bool,
    pub rounds: usize,
    /// Damping in force when the dynamics stopped.
    pub damping: f64,
}

impl EquilibriumReport {
    pub fn total_contribution(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Agents whose block mass is below the support threshold.
    pub fn free_riders(&self) -> Vec<usize> {
        self.agents.iter().enumerate().filter(|(_, a)| a.mass < SUPPORT_THRESHOLD).map(|(k, _)| k).collect()
    }
}

fn block(agent: &AgentProfile, w: &[f64]) -> Vec<f64> {
    agent.group().iter().map(|&i| w[i]).collect()
}

/// Agent k's best block (in group order) against the others' weights in `w`.
pub fn best_response(config: &GameConfig, k: usize, w: &[f64]) -> Result<Vec<f64>> {
    config.check_len(w)?;
    let out = respond(config, k, w)?;
    Ok(block(&config.agents[k], &out.w))
}

fn respond(config: &GameConfig, k: usize, w: &[f64]) -> Result<ascent::BlockOutcome> {
    if k >= config.agents.len() {
        return Err(Error::Validation(format!("agent {k} does not exist")));
    }
    let obj = config.objective(k);
    ascent::ascend_block(&obj, w, None, config.options.inner_tol, 10_000)
}

fn report(config: &GameConfig, w: Vec<f64>, converged: bool, rounds: usize, damping: f64) -> EquilibriumReport {
    let agents = (0..config.agents.len())
        .map(|k| {
            let utility = config.utility(k, &w);
            AgentReport {
                utility,
                scaling_factor: scaling_factor(&config.mechanism, &config.agents[k], &config.space, &w).ok(),
                ir_slack: config.standalone(k).map(|s| utility - s.value),
                kkt_residual: ascent::block_residual(&config.objective(k), &w, None),
                mass: config.agents[k].block_mass(&w),
            }
        })
        .collect();
    let total_information = linalg::spd_logdet(&info_sum(&config.space, &w)).unwrap_or(f64::NEG_INFINITY);
    EquilibriumReport { w, agents, total_information, converged, rounds, damping }
}

/// Random start drawn from the seed: each block near the agent's
/// standalone mass, spread over its points.
pub fn random_start(config: &GameConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; config.space.n_points()];
    for a in &config.agents {
        let mass = if a.cost() > 0.0 { a.rank() as f64 / a.cost() } else { 1.0 };
        let per = mass / a.group().len() as f64;
        for &i in a.group() {
            w[i] = per * rng.random_range(0.2..1.8);
        }
    }
    w
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Round-robin best-response dynamics.
///
/// Converges when a full round moves w by at most `step_tol` and every
/// agent's first-order residual is at most `outer_tol`. A revisited profile
/// within eight rounds switches damping to 0.5; a cycle under damping is an
/// error carrying the cycle.
pub fn solve_equilibrium(config: &GameConfig, start: Option<&[f64]>) -> Result<EquilibriumReport> {
    let mut w = match start {
        Some(s) => {
            config.check_len(s)?;
            s.to_vec()
        }
        None => random_start(config, config.options.seed),
    };
    let scale_free =
        matches!(config.mechanism, MechanismSpec::PureEff { .. }) && config.agents.iter().all(|a| a.cost() == 0.0);
    let mut damping = config.options.damping;
    let mut history: Vec<Vec<f64>> = Vec::new();
    for round in 1..=config.options.max_rounds {
        let before = w.clone();
        for k in 0..config.agents.len() {
            let out = respond(config, k, &w)?;
            for &i in config.agents[k].group() {
                w[i] = (1.0 - damping) * out.w[i] + damping * w[i];
            }
        }
        if scale_free {
            let s: f64 = w.iter().sum();
            if s > 0.0 {
                w.iter_mut().for_each(|x| *x /= s);
            }
        }
        let moved = max_diff(&w, &before);
        if moved <= config.options.step_tol {
            let rep = report(config, w.clone(), false, round, damping);
            if rep.agents.iter().all(|a| a.kkt_residual <= config.options.outer_tol) {
                return Ok(EquilibriumReport { converged: true, ..rep });
            }
        }
        if let Some(back) = history.iter().rev().take(8).position(|h| max_diff(h, &w) <= 1e-12) {
            if back >= 1 && moved > config.options.step_tol {
                let cycle: Vec<Vec<f64>> = history[history.len() - 1 - back..].to_vec();
                if damping >= 0.5 {
                    return Err(Error::Oscillation(cycle));
                }
                damping = 0.5;
                history.clear();
            }
        }
        history.push(w.clone());
        if history.len() > 9 {
            history.remove(0);
        }
    }
    Ok(report(config, w, false, config.options.max_rounds, damping))
}

/// Evaluates an equilibrium candidate without moving it.
pub fn evaluate(config: &GameConfig, w: &[f64]) -> Result<EquilibriumReport> {
    config.check_len(w)?;
    let rep = report(config, w.to_vec(), false, 0, config.options.damping);
    let converged = rep.agents.iter().all(|a| a.kkt_residual <= config.options.outer_tol);
    Ok(EquilibriumReport { converged, ..rep })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheck {
    /// Utility gain of the best unilateral deviation.
    pub improvement: f64,
    pub best_block: Vec<f64>,
    /// Utility minus standalone value; absent for zero-cost agents.
    pub ir_slack: Option<f64>,
    /// Contributes while below its standalone value.
    pub ir_violated: bool,
    /// First-order residual of the computed best response.
    pub response_residual: f64,
    pub response_converged: bool,
}

/// For every agent, the gain available from a best response with the
/// other blocks frozen, and its individual-rationality slack.
pub fn verify_equilibrium(config: &GameConfig, w: &[f64]) -> Result<Vec<AgentCheck>> {
    config.check_len(w)?;
    (0..config.agents.len())
        .map(|k| {
            let here = config.utility(k, w);
            let out = respond(config, k, w)?;
            let there = config.utility(k, &out.w);
            let ir_slack = config.standalone(k).map(|s| here - s.value);
            let contributes = config.agents[k].block_mass(w) > SUPPORT_THRESHOLD;
            Ok(AgentCheck {
                improvement: if here.is_finite() { (there - here).max(0.0) } else { f64::INFINITY },
                best_block: block(&config.agents[k], &out.w),
                ir_slack,
                ir_violated: contributes && ir_slack.is_some_and(|s| s < -1e-9),
                response_residual: out.residual,
                response_converged: out.converged,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationDirection {
    /// Only reductions of the current block.
    Down,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub block: Vec<f64>,
    pub gain: f64,
}

/// Agent k's most profitable unilateral deviation from w.
pub fn deviation_search(config: &GameConfig, w: &[f64], k: usize, direction: DeviationDirection) -> Result<Deviation> {
    config.check_len(w)?;
    if k >= config.agents.len() {
        return Err(Error::Validation(format!("agent {k} does not exist")));
    }
    let obj = config.objective(k);
    let upper = match direction {
        DeviationDirection::Down => Some(w),
        DeviationDirection::Any => None,
    };
    let out = ascent::ascend_block(&obj, w, upper, config.options.inner_tol, 10_000)?;
    let gain = config.utility(k, &out.w) - config.utility(k, w);
    Ok(Deviation { block: block(&config.agents[k], &out.w), gain })
}
