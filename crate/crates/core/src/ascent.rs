//! Maximization of one agent's utility over its own block.
//!
//! The utility is concave between the kinks of the mechanism penalty, which
//! are known in closed form along any line. Each line search splits the line
//! at those kinks and maximizes every piece by bisection on the derivative;
//! the block ascent cycles through coordinate, pairwise-transfer and radial
//! directions.

use nalgebra::{DMatrix, DVector};

use crate::criteria::{local_gradient_with, local_value, CriterionKind};
use crate::design::{AgentProfile, DesignSpace, Pooled};
use crate::error::{Error, Result};
use crate::linalg;
use crate::line::bisect_decreasing;
use crate::mechanism::{combine, log_penalty, penalty_breakpoints, penalty_slope, MechanismSpec};
use crate::solver::local_d_optimal;

/// One agent's utility under a mechanism, with the other blocks held fixed
/// by whatever measure it is evaluated on.
pub(crate) struct Objective<'a> {
    pub space: &'a DesignSpace,
    pub agent: &'a AgentProfile,
    pub mech: &'a MechanismSpec,
}

impl<'a> Objective<'a> {
    pub fn new(space: &'a DesignSpace, agent: &'a AgentProfile, mech: &'a MechanismSpec) -> Self {
        Objective { space, agent, mech }
    }

    /// Utility, −∞ when infeasible.
    pub fn value(&self, w: &[f64]) -> f64 {
        let pooled = Pooled::new(self.space, w);
        let Some(f) = local_value(self.agent, self.space, &pooled).finite() else {
            return f64::NEG_INFINITY;
        };
        match log_penalty(self.mech, self.agent, self.space, w) {
            Ok(p) => combine(self.agent, f, p, self.agent.block_mass(w)),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Own coordinates the agent may move: under Eff, points that π*
    /// ignores are pinned at zero.
    pub fn free_coords(&self) -> Vec<usize> {
        match self.mech {
            MechanismSpec::Eff { pi_star, .. } => {
                self.agent.group().iter().copied().filter(|&i| pi_star[i] > 0.0).collect()
            }
            _ => self.agent.group().to_vec(),
        }
    }

    fn smooth(&self) -> bool {
        !matches!(self.agent.criterion(), CriterionKind::E | CriterionKind::G)
    }
}

/// Scaled local D-optimal block that identifies the agent's subspace on its
/// own: the standalone maximizer for D agents with positive cost.
pub(crate) fn feasibility_seed(agent: &AgentProfile, space: &DesignSpace) -> Result<Vec<f64>> {
    let local = local_d_optimal(agent, space)?;
    let scale = if agent.cost() > 0.0 { agent.rank() as f64 / agent.cost() } else { 1.0 };
    Ok(local.pi.iter().map(|p| p * scale).collect())
}

/// Quantities shared by every line through the current point.
struct Frame {
    /// D only: own points mapped by a square-root factor of M⁺, and the
    /// local criterion value.
    d: Option<(Vec<DVector<f64>>, f64)>,
}

impl Frame {
    fn new(obj: &Objective, w: &[f64]) -> Frame {
        if !obj.agent.criterion().is_d() {
            return Frame { d: None };
        }
        let pooled = Pooled::new(obj.space, w);
        let Some(f0) = local_value(obj.agent, obj.space, &pooled).finite() else {
            return Frame { d: None };
        };
        let eig = linalg::sym_eigen(&pooled.m);
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let cols: Vec<DVector<f64>> = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > linalg::RANK_CUTOFF * top && l > 0.0)
            .map(|(j, &l)| eig.eigenvectors.column(j) / l.sqrt())
            .collect();
        let l = DMatrix::from_columns(&cols);
        let lt = l.transpose();
        let ys = (0..obj.space.n_points())
            .map(|i| if obj.agent.contains(i) { &lt * obj.space.point(i) } else { DVector::zeros(0) })
            .collect();
        Frame { d: Some((ys, f0)) }
    }
}

/// The utility restricted to w + t·v.
struct Line<'a, 'b> {
    obj: &'b Objective<'a>,
    w: &'b [f64],
    v: Vec<f64>,
    lo: f64,
    hi: f64,
    /// D only: nonzero eigenvalues of the direction's information in the
    /// whitened range of M, and the base local value.
    d: Option<(Vec<f64>, f64)>,
    dir_mass: f64,
}

impl<'a, 'b> Line<'a, 'b> {
    fn new(obj: &'b Objective<'a>, frame: &Frame, w: &'b [f64], v: Vec<f64>, upper: Option<&[f64]>) -> Self {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (i, &vi) in v.iter().enumerate() {
            if vi > 0.0 {
                lo = lo.max(-w[i] / vi);
                if let Some(u) = upper {
                    hi = hi.min((u[i] - w[i]) / vi);
                }
            } else if vi < 0.0 {
                hi = hi.min(w[i] / -vi);
                if let Some(u) = upper {
                    lo = lo.max((u[i] - w[i]) / vi);
                }
            }
        }
        let d = frame.d.as_ref().map(|(ys, f0)| {
            let r = ys.iter().find(|y| !y.is_empty()).map_or(0, |y| y.len());
            let mut c = DMatrix::zeros(r, r);
            for (i, &vi) in v.iter().enumerate() {
                if vi != 0.0 {
                    c.ger(vi, &ys[i], &ys[i], 1.0);
                }
            }
            let mu = if r == 0 { vec![] } else { linalg::sym_eigen(&c).eigenvalues.iter().copied().collect() };
            (mu, *f0)
        });
        let dir_mass = obj.agent.group().iter().map(|&i| v[i]).sum();
        Line { obj, w, v, lo, hi, d, dir_mass }
    }

    fn point(&self, t: f64) -> Vec<f64> {
        self.w.iter().zip(&self.v).map(|(a, b)| (a + t * b).max(0.0)).collect()
    }

    /// Unscaled local criterion and its derivative in t.
    fn crit(&self, t: f64) -> Option<(f64, f64)> {
        if let Some((mu, f0)) = &self.d {
            let mut f = *f0;
            let mut df = 0.0;
            for &m in mu {
                let a = 1.0 + t * m;
                if a <= 0.0 {
                    return None;
                }
                f += a.ln();
                df += m / a;
            }
            return Some((f, df));
        }
        let p = self.point(t);
        let pooled = Pooled::new(self.obj.space, &p);
        let f = local_value(self.obj.agent, self.obj.space, &pooled).finite()?;
        let mut df = 0.0;
        for (i, &vi) in self.v.iter().enumerate() {
            if vi != 0.0 {
                df += vi * local_gradient_with(self.obj.agent, self.obj.space, &pooled, i).ok()?;
            }
        }
        Some((f, df))
    }

    fn value(&self, t: f64) -> f64 {
        if self.d.is_none() {
            return self.obj.value(&self.point(t));
        }
        let Some((f, _)) = self.crit(t) else {
            return f64::NEG_INFINITY;
        };
        let p = self.point(t);
        match log_penalty(self.obj.mech, self.obj.agent, self.obj.space, &p) {
            Ok(pen) => combine(self.obj.agent, f, pen, self.obj.agent.block_mass(&p)),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Derivative at t given the penalty slope of the piece containing t.
    fn deriv(&self, t: f64, slope: f64) -> Option<f64> {
        let (f, df) = self.crit(t)?;
        let spend = self.obj.agent.cost() * self.dir_mass;
        if self.obj.agent.criterion().is_d() {
            return Some(df - self.obj.agent.rank() as f64 * slope - spend);
        }
        let pen = log_penalty(self.obj.mech, self.obj.agent, self.obj.space, &self.point(t)).ok()?;
        if pen.is_infinite() {
            return None;
        }
        Some(pen.exp() * (df + f * slope) - spend)
    }

    fn slope_at(&self, t: f64) -> f64 {
        penalty_slope(self.obj.mech, self.obj.agent, self.obj.space, &self.point(t), &self.v)
    }

    fn breakpoints(&self) -> Vec<f64> {
        penalty_breakpoints(self.obj.mech, self.obj.agent, self.w, &self.v)
    }

    /// Finite right end for an unbounded line: doubled until the utility
    /// decreases.
    fn finite_hi(&self, knots: &[f64]) -> f64 {
        let vmax = self.v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let scale = self.w.iter().fold(1.0f64, |a, b| a.max(*b)) / vmax.max(1e-300);
        let mut t = knots.iter().fold(scale.max(self.lo.max(0.0) + 1.0), |a, &k| a.max(2.0 * k.abs() + 1.0));
        for _ in 0..200 {
            match self.deriv(t, self.slope_at(t)) {
                Some(g) if g > 0.0 => t *= 2.0,
                _ => break,
            }
        }
        t
    }

    /// Step length below which a knot is indistinguishable from the
    /// current point.
    fn knot_tolerance(&self) -> f64 {
        let vmax = self.v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let scale = self.w.iter().fold(1.0f64, |a, b| a.max(*b));
        1e-10 * scale / vmax.max(1e-300)
    }

    /// Sorted piece boundaries on [lo, hi].
    fn knots(&self) -> Vec<f64> {
        let lo = if self.lo.is_finite() { self.lo } else { 0.0 };
        let mut inner: Vec<f64> = self.breakpoints().into_iter().filter(|&t| t > lo).collect();
        let hi = if self.hi.is_finite() { self.hi } else { self.finite_hi(&inner) };
        inner.retain(|&t| t < hi);
        let mut knots = vec![lo];
        knots.extend(inner);
        knots.push(hi);
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
        knots
    }

    /// Best t on one piece by bisection on the derivative.
    fn piece_max(&self, a: f64, b: f64) -> f64 {
        let slope = self.slope_at(0.5 * (a + b));
        let g = |t: f64| match self.deriv(t, slope) {
            Some(v) if !v.is_nan() => v,
            _ => {
                if t - a < b - t {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            }
        };
        bisect_decreasing(g, a, b)
    }

    /// Step maximizing the utility along the line, 0 to stay.
    fn maximize(&self) -> f64 {
        let knots = self.knots();
        if knots.len() < 2 || knots[knots.len() - 1] <= knots[0] {
            return 0.0;
        }
        let v0 = self.value(0.0);
        let noise = 1e-12 * (1.0 + v0.abs());
        let mut best = (0.0, v0);
        let mut local: Option<(f64, f64)> = None;
        for win in knots.windows(2) {
            let (a, b) = (win[0], win[1]);
            if b <= a {
                continue;
            }
            let t = self.piece_max(a, b);
            let vt = self.value(t);
            if a <= 0.0 && 0.0 <= b && local.is_none_or(|l| vt > l.1) {
                local = Some((t, vt));
            }
            // the penalty may jump down at a knot, so the left limit of the
            // right end is a candidate of its own
            let left = (b - 1e-3 * self.knot_tolerance()).max(a);
            for (c, vc) in [(t, vt), (a, self.value(a)), (b, self.value(b)), (left, self.value(left))] {
                if vc > best.1 {
                    best = (c, vc);
                }
            }
        }
        match local {
            // derivative-accurate step inside the current piece when it is
            // as good as anything else on the line
            Some((t, vt)) if vt >= best.1 - noise && vt >= v0 - noise => t,
            _ if best.1 > v0 => best.0,
            _ => 0.0,
        }
    }

    /// One-sided derivative at t = 0 toward positive t.
    fn forward_derivative(&self) -> Option<f64> {
        if self.hi <= 0.0 {
            return None;
        }
        // knots closer than rounding to t = 0 count as the current point
        let near = self.knot_tolerance();
        let next = self.breakpoints().into_iter().filter(|&t| t > near).fold(self.hi.min(1.0), f64::min);
        if self.obj.smooth() {
            return self.deriv(0.0, self.slope_at(0.5 * next));
        }
        // second-order one-sided difference: E and G have kinks where
        // extreme eigenvalues or prediction variances tie
        let h = (1e-7 * self.w.iter().fold(1.0f64, |a, b| a.max(*b))).min(0.5 * next);
        let (f0, f1, f2) = (self.value(0.0), self.value(h), self.value(2.0 * h));
        Some((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h))
    }
}

fn unit(n: usize, i: usize, s: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = s;
    v
}

/// Directions the block ascent cycles through.
fn directions(n: usize, free: &[usize], w: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = free.iter().map(|&i| unit(n, i, 1.0)).collect();
    for (a, &i) in free.iter().enumerate() {
        for &j in &free[a + 1..] {
            let mut v = vec![0.0; n];
            v[i] = -1.0;
            v[j] = 1.0;
            out.push(v);
        }
    }
    let mut radial = vec![0.0; n];
    for &i in free {
        radial[i] = w[i];
    }
    if radial.iter().any(|&x| x > 0.0) {
        out.push(radial);
    }
    out
}

/// Largest first-order gain per unit step over coordinate and transfer
/// directions (zero at a block maximum).
pub(crate) fn block_residual(obj: &Objective, w: &[f64], upper: Option<&[f64]>) -> f64 {
    let n = w.len();
    let free = obj.free_coords();
    let frame = Frame::new(obj, w);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for &i in &free {
        dirs.push(unit(n, i, 1.0));
        dirs.push(unit(n, i, -1.0));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for (a, &i) in free.iter().enumerate() {
        for &j in &free[a + 1..] {
            let mut v = vec![0.0; n];
            v[i] = -h;
            v[j] = h;
            dirs.push(v.clone());
            dirs.push(v.iter().map(|x| -x).collect());
        }
    }
    let mut worst = 0.0f64;
    for v in dirs {
        let line = Line::new(obj, &frame, w, v, upper);
        match line.forward_derivative() {
            Some(g) if g.is_nan() => return f64::INFINITY,
            Some(g) => worst = worst.max(g),
            None => {}
        }
    }
    worst
}

/// Rounding level of the difference quotients used for E and G; residuals
/// below it are indistinguishable from zero.
fn difference_noise(obj: &Objective, w: &[f64], value: f64) -> f64 {
    if obj.smooth() {
        return 0.0;
    }
    let h = 1e-7 * w.iter().fold(1.0f64, |a, b| a.max(*b));
    8.0 * f64::EPSILON * (1.0 + value.abs()) / h
}

pub(crate) struct BlockOutcome {
    pub w: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
}

/// Maximizes the agent's utility over its own block of `start`, optionally
/// capped elementwise by `upper`. Other blocks are left untouched.
pub(crate) fn ascend_block(
    obj: &Objective,
    start: &[f64],
    upper: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
) -> Result<BlockOutcome> {
    let n = start.len();
    let mut w = start.to_vec();
    let free = obj.free_coords();
    for &i in obj.agent.group() {
        if !free.contains(&i) {
            w[i] = 0.0;
        }
        if let Some(u) = upper {
            w[i] = w[i].min(u[i]);
        }
    }
    log_penalty(obj.mech, obj.agent, obj.space, &w)?;
    if obj.value(&w) == f64::NEG_INFINITY {
        let seed = feasibility_seed(obj.agent, obj.space)?;
        for &i in &free {
            w[i] = w[i].max(seed[i]);
            if let Some(u) = upper {
                w[i] = w[i].min(u[i]);
            }
        }
        if obj.value(&w) == f64::NEG_INFINITY {
            return Err(Error::Singular(obj.agent.index()));
        }
    }
    let mut residual = f64::INFINITY;
    let mut value = obj.value(&w);
    for _ in 0..max_sweeps {
        let before = value;
        let mut moved = false;
        for v in directions(n, &free, &w) {
            let frame = Frame::new(obj, &w);
            let line = Line::new(obj, &frame, &w, v, upper);
            let t = line.maximize();
            if t != 0.0 {
                let next = line.point(t);
                if next != w {
                    moved = true;
                    w = next;
                }
            }
        }
        residual = block_residual(obj, &w, upper);
        value = obj.value(&w);
        if residual <= tol.max(difference_noise(obj, &w, value)) {
            return Ok(BlockOutcome { w, residual, converged: true });
        }
        if !moved || value - before <= 4.0 * f64::EPSILON * (1.0 + value.abs()) {
            break;
        }
    }
    Ok(BlockOutcome { w, residual, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn space(points: Vec<Vec<f64>>, groups: Vec<Vec<usize>>) -> DesignSpace {
        DesignSpace::new(points, groups).unwrap()
    }

    #[test]
    fn isolated_agent_on_basis() {
        let s = space(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], vec![vec![0, 1, 2]]);
        let a = AgentProfile::new(&s, 0, 2.0, CriterionKind::D).unwrap();
        let fed = MechanismSpec::Fed;
        let obj = Objective::new(&s, &a, &fed);
        let out = ascend_block(&obj, &[0.1, 3.0, 0.7], None, 1e-10, 1000).unwrap();
        assert!(out.converged);
        for v in out.w {
            assert_relative_eq!(v, 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn infeasible_start_is_seeded() {
        let s = space(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0, 1]]);
        let a = AgentProfile::new(&s, 0, 1.0, CriterionKind::D).unwrap();
        let fed = MechanismSpec::Fed;
        let obj = Objective::new(&s, &a, &fed);
        let out = ascend_block(&obj, &[0.0, 0.0], None, 1e-10, 1000).unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.w[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(out.w[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn upper_bound_is_respected() {
        let s = space(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0, 1]]);
        let a = AgentProfile::new(&s, 0, 1.0, CriterionKind::D).unwrap();
        let fed = MechanismSpec::Fed;
        let obj = Objective::new(&s, &a, &fed);
        let out = ascend_block(&obj, &[0.5, 0.5], Some(&[0.5, 2.0]), 1e-10, 1000).unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.w[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(out.w[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn g_criterion_block_reaches_the_tie() {
        // −max(1/w₁, 1/w₂) − c(w₁+w₂) peaks at w₁ = w₂ = (2c)^{-1/2}
        let s = space(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0, 1]]);
        let c = 1.5;
        let a = AgentProfile::new(&s, 0, c, CriterionKind::G).unwrap();
        let fed = MechanismSpec::Fed;
        let obj = Objective::new(&s, &a, &fed);
        let out = ascend_block(&obj, &[0.3, 1.2], None, 1e-6, 1000).unwrap();
        assert!(out.converged, "residual {}", out.residual);
        let expect = (2.0 * c).powf(-0.5);
        assert!((out.w[0] - expect).abs() < 1e-6 && (out.w[1] - expect).abs() < 1e-6, "{:?}", out.w);
    }

    #[test]
    fn residual_vanishes_only_at_the_block_maximum() {
        let s = space(vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0]], vec![vec![0, 1], vec![2]]);
        let a = AgentProfile::new(&s, 0, 1.0, CriterionKind::A).unwrap();
        let fed = MechanismSpec::Fed;
        let obj = Objective::new(&s, &a, &fed);
        assert!(block_residual(&obj, &[0.3, 0.3, 1.0], None) > 1e-3);
        let out = ascend_block(&obj, &[0.3, 0.3, 1.0], None, 1e-9, 5000).unwrap();
        assert!(out.converged);
        assert_eq!(out.w[2], 1.0);
    }
}
