//! Parameter sweeps written as CSV.

use std::io::Write;
use std::str::FromStr;

use codesign::game::solve_equilibrium;
use codesign::mechanism::MechanismKind;

use crate::error::{CliError, CliResult};
use crate::scenario::{MechanismChoice, Scenario};

/// Scenario entry a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    /// `costs[k]`
    Cost(usize),
    /// `points[i][j]`
    Coordinate(usize, usize),
    /// `angle[i]`: point i becomes (cos v, sin v) in its first two
    /// coordinates.
    Angle(usize),
}

fn indices(s: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let mut rest = s;
    while !rest.is_empty() {
        let inner = rest.strip_prefix('[')?;
        let end = inner.find(']')?;
        out.push(inner[..end].trim().parse().ok()?);
        rest = &inner[end + 1..];
    }
    Some(out)
}

impl FromStr for Param {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let bad =
            || CliError::validation(format!("unknown parameter `{s}` (expected costs[k], points[i][j] or angle[i])"));
        let split = s.find('[').ok_or_else(bad)?;
        let idx = indices(&s[split..]).ok_or_else(bad)?;
        match (&s[..split], idx.as_slice()) {
            ("costs", [k]) => Ok(Param::Cost(*k)),
            ("points", [i, j]) => Ok(Param::Coordinate(*i, *j)),
            ("angle", [i]) => Ok(Param::Angle(*i)),
            _ => Err(bad()),
        }
    }
}

impl Param {
    pub fn check(&self, s: &Scenario) -> CliResult<()> {
        let ok = match *self {
            Param::Cost(k) => k < s.costs.len(),
            Param::Coordinate(i, j) => s.points.get(i).is_some_and(|p| j < p.len()),
            Param::Angle(i) => s.points.get(i).is_some_and(|p| p.len() >= 2),
        };
        if ok {
            Ok(())
        } else {
            Err(CliError::validation(format!("parameter {self:?} does not exist in the scenario")))
        }
    }

    pub fn apply(&self, s: &Scenario, v: f64) -> Scenario {
        let mut out = s.clone();
        match *self {
            Param::Cost(k) => out.costs[k] = v,
            Param::Coordinate(i, j) => out.points[i][j] = v,
            Param::Angle(i) => {
                out.points[i][0] = v.cos();
                out.points[i][1] = v.sin();
            }
        }
        out
    }
}

/// Evenly spaced grid `lo:hi:steps` including both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl FromStr for Range {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let bad = |why: &str| CliError::validation(format!("invalid range `{s}`: {why}"));
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, steps] = parts.as_slice() else {
            return Err(bad("expected lo:hi:steps"));
        };
        let lo: f64 = lo.trim().parse().map_err(|_| bad("lo is not a number"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad("hi is not a number"))?;
        let steps: usize = steps.trim().parse().map_err(|_| bad("steps is not a count"))?;
        if steps < 2 {
            return Err(bad("need at least 2 steps"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(bad("need finite lo < hi"));
        }
        Ok(Range { lo, hi, steps })
    }
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        let last = (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.lo + (self.hi - self.lo) * i as f64 / last).collect()
    }
}

pub fn parse_mechanisms(list: &str) -> CliResult<Vec<MechanismKind>> {
    list.split(',')
        .map(|m| m.trim().parse::<MechanismKind>().map_err(|e| CliError::validation(e.to_string())))
        .collect()
}

/// Column names for n points and K agents.
pub fn header(n: usize, k: usize) -> Vec<String> {
    let mut h = vec!["param_value".to_string(), "mechanism".to_string()];
    h.extend((1..=n).map(|i| format!("w_{i}")));
    h.push("total_contribution".into());
    h.push("total_information".into());
    h.extend((1..=k).map(|j| format!("u_{j}")));
    h.push("converged".into());
    h
}

/// Twelve significant digits.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        format!("{v}")
    }
}

/// One row: the equilibrium of one grid point under one mechanism, or NaN
/// columns with converged=false when it could not be computed.
fn row(s: &Scenario, value: f64, kind: MechanismKind) -> Vec<String> {
    let (n, k) = (s.points.len(), s.groups.len());
    let solved =
        s.resolve_with(MechanismChoice::Auto(kind)).and_then(|r| Ok((solve_equilibrium(&r.config, None)?, r.config)));
    let mut out = vec![num(value), kind.name().to_string()];
    match solved {
        Ok((rep, config)) => {
            out.extend(rep.w.iter().map(|&x| num(x)));
            out.push(num(rep.total_contribution()));
            out.push(num(rep.total_information));
            out.extend((0..k).map(|j| num(config.utility(j, &rep.w))));
            out.push(rep.converged.to_string());
        }
        Err(_) => {
            out.extend(std::iter::repeat_n(num(f64::NAN), n + 2 + k));
            out.push("false".into());
        }
    }
    out
}

/// Writes the sweep and returns the number of rows that did not converge.
pub fn sweep(
    scenario: &Scenario,
    param: Param,
    range: Range,
    mechanisms: &[MechanismKind],
    out: impl Write,
) -> CliResult<usize> {
    param.check(scenario)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(scenario.points.len(), scenario.groups.len()))?;
    let mut failed = 0;
    for v in range.values() {
        let s = param.apply(scenario, v);
        for &kind in mechanisms {
            let r = row(&s, v, kind);
            failed += usize::from(r.last().map(String::as_str) != Some("true"));
            w.write_record(&r)?;
        }
    }
    w.flush()?;
    Ok(failed)
}
