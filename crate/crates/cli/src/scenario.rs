//! Scenario files: the published game plus solver settings.

use std::path::Path;

use codesign::game::{GameConfig, GameOptions};
use codesign::mechanism::{solve_w_max, MaxInformation, MechanismKind, MechanismSpec};
use codesign::solver::SolverOptions;
use codesign::{AgentProfile, CriterionKind, DesignSpace};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// One row per design point.
    pub points: Vec<Vec<f64>>,
    /// Point indices owned by each agent.
    pub groups: Vec<Vec<usize>>,
    pub costs: Vec<f64>,
    /// One criterion per agent; D for every agent when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criteria: Option<Vec<CriterionSpec>>,
    #[serde(default)]
    pub mechanism: MechanismChoice,
    #[serde(default, skip_serializing_if = "SolverBlock::is_empty")]
    pub solver: SolverBlock,
    #[serde(default)]
    pub seed: u64,
    /// Candidate design checked by `game verify`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<Vec<f64>>,
}

/// A criterion name, or V with explicit weights over the agent's points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CriterionSpec {
    Name(String),
    Weighted(WeightedV),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedV {
    #[serde(rename = "V")]
    pub weights: Vec<f64>,
}

impl CriterionSpec {
    pub fn kind(&self) -> CliResult<CriterionKind> {
        match self {
            CriterionSpec::Name(n) => match n.as_str() {
                "D" => Ok(CriterionKind::D),
                "A" => Ok(CriterionKind::A),
                "E" => Ok(CriterionKind::E),
                "G" => Ok(CriterionKind::G),
                "V" => Ok(CriterionKind::V(None)),
                other => Err(CliError::validation(format!("unknown criterion `{other}` (expected D, A, E, G or V)"))),
            },
            CriterionSpec::Weighted(v) => Ok(CriterionKind::V(Some(v.weights.clone()))),
        }
    }
}

/// A mechanism name whose parameters are computed on load, or a mechanism
/// with its published parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "Value")]
pub enum MechanismChoice {
    Auto(MechanismKind),
    Published(MechanismSpec),
}

impl Default for MechanismChoice {
    fn default() -> Self {
        MechanismChoice::Published(MechanismSpec::Fed)
    }
}

impl MechanismChoice {
    pub fn kind(&self) -> MechanismKind {
        match self {
            MechanismChoice::Auto(k) => *k,
            MechanismChoice::Published(s) => s.kind(),
        }
    }
}

impl TryFrom<Value> for MechanismChoice {
    type Error = String;

    fn try_from(v: Value) -> Result<Self, String> {
        match v {
            Value::String(s) => {
                let name = s.strip_prefix("auto-").unwrap_or(&s);
                name.parse::<MechanismKind>().map(MechanismChoice::Auto).map_err(|e| e.to_string())
            }
            Value::Object(ref map) => {
                // the parameter-free variant would otherwise accept any field
                if map.get("name").and_then(Value::as_str) == Some("fed") {
                    if let Some(extra) = map.keys().find(|k| *k != "name") {
                        return Err(format!("unknown field `{extra}` for mechanism fed"));
                    }
                }
                serde_json::from_value(v).map(MechanismChoice::Published).map_err(|e| e.to_string())
            }
            other => Err(format!("mechanism must be a name or an object, got {other}")),
        }
    }
}

impl From<MechanismChoice> for Value {
    fn from(m: MechanismChoice) -> Value {
        match m {
            MechanismChoice::Auto(k) => Value::String(k.name().to_string()),
            MechanismChoice::Published(s) => serde_json::to_value(s).expect("mechanism serializes"),
        }
    }
}

/// Optional overrides of the design solver and the game dynamics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_tol: Option<f64>,
}

impl SolverBlock {
    fn is_empty(&self) -> bool {
        *self == SolverBlock::default()
    }
}

/// A resolved game with whatever the mechanism published on the way.
pub struct Resolved {
    pub config: GameConfig,
    /// Details of the information-maximizing program when it was solved.
    pub max_information: Option<MaxInformation>,
}

impl Scenario {
    /// Reads a scenario file, or the scenario embedded in a report.
    pub fn load(path: &Path) -> CliResult<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        Scenario::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Scenario> {
        let value: Value = serde_json::from_str(text)?;
        let value = match value.get("scenario") {
            Some(inner) => inner.clone(),
            None => value,
        };
        serde_json::from_value(value).map_err(|e| CliError::validation(format!("invalid scenario: {e}")))
    }

    pub fn space(&self) -> CliResult<DesignSpace> {
        Ok(DesignSpace::new(self.points.clone(), self.groups.clone())?)
    }

    pub fn agents(&self, space: &DesignSpace) -> CliResult<Vec<AgentProfile>> {
        if self.costs.len() != self.groups.len() {
            return Err(CliError::validation(format!("{} costs for {} groups", self.costs.len(), self.groups.len())));
        }
        let criteria = match &self.criteria {
            None => vec![CriterionKind::D; self.groups.len()],
            Some(c) if c.len() == self.groups.len() => c.iter().map(CriterionSpec::kind).collect::<CliResult<_>>()?,
            Some(c) => {
                return Err(CliError::validation(format!("{} criteria for {} groups", c.len(), self.groups.len())))
            }
        };
        Ok(AgentProfile::all(space, &self.costs, &criteria)?)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions { tol: self.solver.tol.unwrap_or(d.tol), max_iter: self.solver.max_iter.unwrap_or(d.max_iter) }
    }

    pub fn game_options(&self) -> GameOptions {
        let d = GameOptions::default();
        let s = &self.solver;
        GameOptions {
            max_rounds: s.max_rounds.unwrap_or(d.max_rounds),
            damping: s.damping.unwrap_or(d.damping),
            inner_tol: s.inner_tol.unwrap_or(d.inner_tol),
            outer_tol: s.outer_tol.unwrap_or(d.outer_tol),
            step_tol: s.step_tol.unwrap_or(d.step_tol),
            seed: self.seed,
        }
    }

    /// Builds the game, computing the mechanism's parameters when the
    /// scenario asks for them.
    pub fn resolve(&self) -> CliResult<Resolved> {
        self.resolve_with(self.mechanism.clone())
    }

    pub fn resolve_with(&self, choice: MechanismChoice) -> CliResult<Resolved> {
        let space = self.space()?;
        let agents = self.agents(&space)?;
        let (mechanism, max_information) = match choice {
            MechanismChoice::Published(spec) => (spec, None),
            MechanismChoice::Auto(MechanismKind::InfoMax) => {
                let info = solve_w_max(&space, &agents)?;
                (MechanismSpec::InfoMax { w_max: info.w.clone() }, Some(info))
            }
            MechanismChoice::Auto(kind) => (MechanismSpec::publish(kind, &space, &agents)?, None),
        };
        let config = GameConfig::new(space, agents, mechanism, self.game_options())?;
        Ok(Resolved { config, max_information })
    }

    /// The same scenario with the mechanism's parameters written out.
    pub fn published(&self, spec: &MechanismSpec) -> Scenario {
        Scenario { mechanism: MechanismChoice::Published(spec.clone()), ..self.clone() }
    }
}
