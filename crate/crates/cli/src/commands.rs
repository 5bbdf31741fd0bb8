//! The verbs: each turns a scenario into a JSON report.

use codesign::analysis::{efficiency_check, fairness_check, free_riders, price_of_anarchy};
use codesign::game::{solve_equilibrium, verify_equilibrium, EquilibriumReport, GameConfig};
use codesign::mechanism::published_pi_star;
use codesign::solver::{solve_optimal_design, SolverOptions};
use codesign::CriterionKind;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::scenario::Scenario;

/// Largest utility gain from a unilateral deviation still read as none.
pub const DEVIATION_TOLERANCE: f64 = 1e-6;

/// A report, and the failure to signal after writing it.
pub struct Outcome {
    pub report: Value,
    pub failure: Option<CliError>,
}

impl Outcome {
    fn ok(report: Value) -> Self {
        Outcome { report, failure: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Analysis {
    Poa,
    Fairness,
    Freeride,
    Efficiency,
}

pub fn design_solve(scenario: &Scenario) -> CliResult<Outcome> {
    let space = scenario.space()?;
    let opts: SolverOptions = scenario.solver_options();
    let opt = solve_optimal_design(&CriterionKind::D, &space, None, &opts)?;
    if !opt.converged {
        return Err(CliError::not_converged(format!("D-optimal design after {} iterations", opt.iterations)));
    }
    Ok(Outcome::ok(json!({
        "criterion": "D",
        "dimension": space.dim(),
        "pi": opt.pi,
        "value": opt.value,
        "certificate": opt.certificate,
        "iterations": opt.iterations,
    })))
}

fn equilibrium(config: &GameConfig) -> CliResult<EquilibriumReport> {
    Ok(solve_equilibrium(config, None)?)
}

fn unconverged(rep: &EquilibriumReport) -> Option<CliError> {
    (!rep.converged).then(|| CliError::not_converged(format!("best-response dynamics after {} rounds", rep.rounds)))
}

pub fn game_solve(scenario: &Scenario) -> CliResult<Outcome> {
    let resolved = scenario.resolve()?;
    let config = &resolved.config;
    let rep = equilibrium(config)?;
    let mut report = json!({
        "scenario": scenario.published(&config.mechanism),
        "equilibrium": rep,
        "free_riders": rep.free_riders(),
    });
    if let Some(info) = &resolved.max_information {
        report["max_information"] = json!(info);
    }
    Ok(Outcome { failure: unconverged(&rep), report })
}

/// Checks a candidate design: the scenario's `design`, the equilibrium of
/// a report, or else a freshly solved equilibrium.
pub fn game_verify(scenario: &Scenario, report_design: Option<Vec<f64>>) -> CliResult<Outcome> {
    let resolved = scenario.resolve()?;
    let config = &resolved.config;
    let (w, source) = match (report_design, &scenario.design) {
        (Some(w), _) => (w, "report"),
        (None, Some(w)) => (w.clone(), "scenario"),
        (None, None) => (equilibrium(config)?.w, "solved"),
    };
    let checks = verify_equilibrium(config, &w)?;
    let is_equilibrium = checks.iter().all(|c| c.improvement <= DEVIATION_TOLERANCE && !c.ir_violated);
    Ok(Outcome::ok(json!({
        "design_source": source,
        "w": w,
        "is_equilibrium": is_equilibrium,
        "deviation_tolerance": DEVIATION_TOLERANCE,
        "agents": checks,
    })))
}

pub fn analyze(scenario: &Scenario, which: Analysis) -> CliResult<Outcome> {
    let resolved = scenario.resolve()?;
    let config = &resolved.config;
    if which == Analysis::Poa {
        let poa = price_of_anarchy(&config.space, &config.agents)?;
        return Ok(Outcome::ok(json!({ "analysis": "poa", "price_of_anarchy": poa })));
    }
    let rep = equilibrium(config)?;
    let mut report = json!({ "mechanism": config.mechanism, "equilibrium": rep });
    match which {
        Analysis::Fairness => {
            let fair = fairness_check(config, &rep.w)?;
            report["analysis"] = json!("fairness");
            report["violations"] = json!(fair.violations());
            report["fairness"] = json!(fair);
        }
        Analysis::Freeride => {
            report["analysis"] = json!("freeride");
            report["free_riders"] = json!(free_riders(&config.space, &rep.w)?);
        }
        Analysis::Efficiency => {
            let pi_star = published_pi_star(&config.space)?;
            report["analysis"] = json!("efficiency");
            report["pi_star"] = json!(pi_star);
            report["efficiency"] = json!(efficiency_check(&config.space, &rep.w, &pi_star)?);
        }
        Analysis::Poa => unreachable!(),
    }
    Ok(Outcome { failure: unconverged(&rep), report })
}
