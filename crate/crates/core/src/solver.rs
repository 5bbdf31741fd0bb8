//! Optimal designs over the simplex and the restricted programs used by
//! standalone values and the price-of-anarchy bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::concave::{projected_newton, subspace_terms, Smooth};
use crate::criteria::{criterion_value, CriterionKind};
use crate::design::{info_sum, orthonormal_basis, AgentProfile, DesignSpace, Pooled};
use crate::error::{Error, Result};
use crate::linalg;
use crate::line::{golden_max, project_simplex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Relative stopping gap (KW gap over the dimension for D).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-6, max_iter: 100_000 }
    }
}

impl SolverOptions {
    /// Tolerance used where downstream code compares information matrices.
    pub fn tight() -> Self {
        SolverOptions { tol: 1e-11, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalDesign {
    /// Weights over all n points (zero outside a restriction).
    pub pi: Vec<f64>,
    pub value: f64,
    /// Largest quadratic form max zᵀM(π)⁻¹z in the solved coordinates.
    pub certificate: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Outcome {
    pi: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn quad(z: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (z.transpose() * m * z)[(0, 0)]
}

fn moment(zs: &[DVector<f64>], pi: &[f64]) -> DMatrix<f64> {
    let r = zs[0].len();
    let mut m = DMatrix::zeros(r, r);
    for (z, &p) in zs.iter().zip(pi) {
        if p != 0.0 {
            m.ger(p, z, z, 1.0);
        }
    }
    linalg::symmetrize(&m)
}

fn forms(zs: &[DVector<f64>], inv: &DMatrix<f64>) -> Vec<f64> {
    zs.iter().map(|z| quad(z, inv)).collect()
}

/// D-optimal weights on `zs` (which must span their r-dimensional space).
///
/// Multiplicative updates first; once they stall, Frank-Wolfe steps with
/// away steps and exact line search.
fn d_optimal(zs: &[DVector<f64>], opts: &SolverOptions) -> Result<Outcome> {
    let n = zs.len();
    let r = zs[0].len() as f64;
    let mut pi = vec![1.0 / n as f64; n];
    let mut multiplicative = true;
    let mut gap_mark = f64::INFINITY;
    for it in 0..opts.max_iter {
        let m = moment(zs, &pi);
        let inv = linalg::spd_inverse(&m).ok_or(Error::SingularM)?;
        let g = forms(zs, &inv);
        let (jmax, gmax) = argmax(&g);
        let gap = gmax - r;
        if gap <= opts.tol * r {
            return Ok(Outcome { pi, iterations: it, converged: true });
        }
        if multiplicative {
            for (p, gi) in pi.iter_mut().zip(&g) {
                *p *= gi / r;
            }
            renormalize(&mut pi);
            if it % 50 == 49 {
                if gap > 0.5 * gap_mark {
                    multiplicative = false;
                }
                gap_mark = gap;
            }
            continue;
        }
        // smallest form on the support
        let (jmin, gmin) = g.iter().enumerate().filter(|(j, _)| pi[*j] > 0.0).fold((0, f64::INFINITY), |a, (j, &v)| {
            if v < a.1 {
                (j, v)
            } else {
                a
            }
        });
        let toward = gmax / r - 1.0;
        let away = 1.0 - gmin / r;
        if toward >= away || pi[jmin] >= 1.0 {
            let alpha = (gmax - r) / (r * (gmax - 1.0));
            step_toward(&mut pi, jmax, alpha);
        } else {
            let floor = -pi[jmin] / (1.0 - pi[jmin]);
            let alpha = if gmin <= 1.0 { floor } else { ((gmin - r) / (r * (gmin - 1.0))).max(floor) };
            step_toward(&mut pi, jmin, alpha);
            if alpha <= floor {
                pi[jmin] = 0.0;
            }
        }
        renormalize(&mut pi);
    }
    Ok(Outcome { pi, iterations: opts.max_iter, converged: false })
}

fn step_toward(pi: &mut [f64], j: usize, alpha: f64) {
    for p in pi.iter_mut() {
        *p *= 1.0 - alpha;
    }
    pi[j] += alpha;
    if pi[j] < 0.0 {
        pi[j] = 0.0;
    }
}

fn renormalize(pi: &mut [f64]) {
    let s: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= s;
    }
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (j, &x)| if x > a.1 { (j, x) } else { a })
}

/// Criterion value and π-gradient of a (possibly smoothed) criterion.
fn smooth_eval(kind: &CriterionKind, zs: &[DVector<f64>], pi: &[f64], mu: f64) -> Option<(f64, Vec<f64>)> {
    let m = moment(zs, pi);
    let inv = linalg::spd_inverse(&m)?;
    let (value, gmat) = match kind {
        CriterionKind::E => {
            let eig = linalg::sym_eigen(&inv);
            let lam = &eig.eigenvalues;
            let top = lam.max();
            let wts: Vec<f64> = lam.iter().map(|l| ((l - top) / mu).exp()).collect();
            let s: f64 = wts.iter().sum();
            let value = -(top + mu * s.ln());
            let r = inv.nrows();
            let mut w = DMatrix::zeros(r, r);
            for (j, wj) in wts.iter().enumerate() {
                let u = eig.eigenvectors.column(j);
                w += (u * u.transpose()) * (wj / s);
            }
            (value, &inv * w * &inv)
        }
        CriterionKind::G => {
            let q = forms(zs, &inv);
            let top = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let wts: Vec<f64> = q.iter().map(|v| ((v - top) / mu).exp()).collect();
            let s: f64 = wts.iter().sum();
            let value = -(top + mu * s.ln());
            let r = inv.nrows();
            let mut w = DMatrix::zeros(r, r);
            for (z, wj) in zs.iter().zip(&wts) {
                w.ger(wj / s, z, z, 1.0);
            }
            (value, &inv * w * &inv)
        }
        CriterionKind::A => (-inv.trace(), &inv * &inv),
        CriterionKind::V(p) => {
            let p = p.clone().unwrap_or_else(|| vec![1.0 / zs.len() as f64; zs.len()]);
            let r = inv.nrows();
            let mut w = DMatrix::zeros(r, r);
            for (z, pj) in zs.iter().zip(&p) {
                w.ger(*pj, z, z, 1.0);
            }
            let value = -(w.component_mul(&inv)).sum();
            (value, &inv * w * &inv)
        }
        CriterionKind::D => (linalg::spd_logdet(&m)?, inv),
    };
    Some((value, forms(zs, &gmat)))
}

/// Projected-gradient ascent on the simplex with backtracking. For E and G
/// the criterion is smoothed by a soft maximum whose temperature is lowered
/// stage by stage.
fn simplex_ascent(kind: &CriterionKind, zs: &[DVector<f64>], opts: &SolverOptions) -> Result<Outcome> {
    let n = zs.len();
    let mut pi = vec![1.0 / n as f64; n];
    let smoothed = matches!(kind, CriterionKind::E | CriterionKind::G);
    let scale = {
        let m = moment(zs, &pi);
        let inv = linalg::spd_inverse(&m).ok_or(Error::SingularM)?;
        inv.trace().abs().max(1e-12)
    };
    let temps: Vec<f64> = if smoothed { (1..=7).map(|e| scale * 10f64.powi(-e)).collect() } else { vec![1.0] };
    let per_stage = (opts.max_iter / temps.len()).max(1);
    let mut iterations = 0;
    let mut converged = false;
    for (stage, &mu) in temps.iter().enumerate() {
        let last = stage + 1 == temps.len();
        let tol = if smoothed { opts.tol.max(1e-4) } else { opts.tol };
        let (mut f, mut g) = smooth_eval(kind, zs, &pi, mu).ok_or(Error::SingularM)?;
        let mut step = 1.0 / g.iter().fold(1e-300f64, |a, v| a.max(v.abs()));
        converged = false;
        for _ in 0..per_stage {
            iterations += 1;
            let mean: f64 = pi.iter().zip(&g).map(|(p, v)| p * v).sum();
            let gap = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - mean;
            if gap <= tol * f.abs().max(1.0) {
                converged = true;
                break;
            }
            let mut accepted = false;
            while step > 1e-300 {
                let trial: Vec<f64> = pi.iter().zip(&g).map(|(p, v)| p + step * v).collect();
                let cand = project_simplex(&trial);
                let lin: f64 = cand.iter().zip(&pi).zip(&g).map(|((c, p), v)| (c - p) * v).sum();
                if let Some((fc, gc)) = smooth_eval(kind, zs, &cand, mu) {
                    if fc >= f + 1e-4 * lin && lin > 0.0 {
                        pi = cand;
                        f = fc;
                        g = gc;
                        step *= 2.0;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                converged = gap <= 1e3 * tol * f.abs().max(1.0);
                break;
            }
        }
        if last {
            break;
        }
    }
    Ok(Outcome { pi, iterations, converged })
}

/// Optimal design for `kind` over all points, or over `restriction` in the
/// coordinates of an orthonormal basis of the restricted span.
pub fn solve_optimal_design(
    kind: &CriterionKind,
    space: &DesignSpace,
    restriction: Option<&[usize]>,
    opts: &SolverOptions,
) -> Result<OptimalDesign> {
    let all: Vec<usize> = (0..space.n_points()).collect();
    let idx = restriction.unwrap_or(&all);
    if idx.is_empty() {
        return Err(Error::Validation("restriction is empty".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= space.n_points()) {
        return Err(Error::Validation(format!("restriction refers to missing point {bad}")));
    }
    let zs: Vec<DVector<f64>> = if restriction.is_some() {
        let a = orthonormal_basis(space, idx);
        let at = a.transpose();
        idx.iter().map(|&i| &at * space.point(i)).collect()
    } else {
        idx.iter().map(|&i| space.point(i).clone()).collect()
    };
    if let CriterionKind::V(Some(p)) = kind {
        crate::design::check_probability(p, zs.len(), "V weights")?;
    }
    let out = solve_on_points(kind, &zs, opts)?;
    let mut pi = vec![0.0; space.n_points()];
    for (j, &i) in idx.iter().enumerate() {
        pi[i] = out.pi[j];
    }
    Ok(finish(kind, &zs, out, pi))
}

fn solve_on_points(kind: &CriterionKind, zs: &[DVector<f64>], opts: &SolverOptions) -> Result<Outcome> {
    match kind {
        CriterionKind::D => d_optimal(zs, opts),
        _ => simplex_ascent(kind, zs, opts),
    }
}

fn finish(kind: &CriterionKind, zs: &[DVector<f64>], out: Outcome, pi: Vec<f64>) -> OptimalDesign {
    let m = moment(zs, &out.pi);
    let value = criterion_value(kind, &m, zs).or_neg_inf();
    let certificate = linalg::spd_inverse(&m)
        .map(|inv| forms(zs, &inv).into_iter().fold(f64::NEG_INFINITY, f64::max))
        .unwrap_or(f64::INFINITY);
    OptimalDesign { pi, value, certificate, iterations: out.iterations, converged: out.converged }
}

/// max over the points of xᵀ M(π)⁻¹ x; equals d exactly at a D-optimal π.
pub fn kw_certificate(space: &DesignSpace, pi: &[f64]) -> Result<f64> {
    if pi.len() != space.n_points() {
        return Err(Error::DimensionMismatch { expected: space.n_points(), got: pi.len() });
    }
    let m = info_sum(space, pi);
    let inv = linalg::spd_inverse(&m).ok_or(Error::SingularM)?;
    Ok(forms(space.points(), &inv).into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Best log det of the agent's own information in its basis coordinates,
/// over probability vectors on its group.
pub fn solve_local_theta(agent: &AgentProfile, space: &DesignSpace) -> Result<f64> {
    Ok(local_d_optimal(agent, space)?.value)
}

/// Local D-optimal design of an agent (weights over all n points).
pub fn local_d_optimal(agent: &AgentProfile, space: &DesignSpace) -> Result<OptimalDesign> {
    let zs = agent.projected_points(space);
    let out = d_optimal(&zs, &SolverOptions::tight())?;
    let mut pi = vec![0.0; space.n_points()];
    for (j, &i) in agent.group().iter().enumerate() {
        pi[i] = out.pi[j];
    }
    Ok(finish(&CriterionKind::D, &zs, out, pi))
}

/// Value and gradient of −log det(Aᵀ M(π)⁺ A) when A is identified.
fn subspace_state(space: &DesignSpace, basis: &DMatrix<f64>, pi: &[f64]) -> Option<(f64, Vec<f64>)> {
    let pooled = Pooled::new(space, pi);
    if !pooled.identifies(basis) {
        return None;
    }
    let b = basis.transpose() * &pooled.pinv * basis;
    let binv = linalg::spd_inverse(&b)?;
    let value = linalg::spd_logdet(&binv)?;
    let at = basis.transpose();
    let g = space.points().iter().map(|x| quad(&(&at * (&pooled.pinv * x)), &binv)).collect();
    Some((value, g))
}

fn subspace_value(space: &DesignSpace, basis: &DMatrix<f64>, pi: &[f64]) -> f64 {
    subspace_state(space, basis, pi).map(|s| s.0).unwrap_or(f64::NEG_INFINITY)
}

/// Best information on the agent's subspace from the whole pooled space:
/// the maximum over π of −log det(Aᵀ M(π)⁻¹ A).
///
/// At the optimum max_i gᵢ equals the rank r, which is the stopping
/// certificate; `certificate` holds that maximum.
pub fn solve_theta_star(agent: &AgentProfile, space: &DesignSpace, opts: &SolverOptions) -> Result<OptimalDesign> {
    let mut out = pooled_subspace_design(agent, space, opts)?;
    // the iterates keep M invertible, so an optimum on a singular M, such as
    // the agent's own design, is only approached; compare with it directly
    let local = local_d_optimal(agent, space)?;
    if let Some((v, g)) = subspace_state(space, agent.basis(), &local.pi) {
        if v > out.value {
            out.value = v;
            out.certificate = argmax(&g).1;
            out.pi = local.pi;
        }
    }
    Ok(out)
}

fn pooled_subspace_design(agent: &AgentProfile, space: &DesignSpace, opts: &SolverOptions) -> Result<OptimalDesign> {
    let basis = agent.basis();
    let r = agent.rank() as f64;
    let n = space.n_points();
    let mut pi = vec![1.0 / n as f64; n];
    let (mut value, mut g) = subspace_state(space, basis, &pi).ok_or(Error::SingularM)?;
    let mut history = vec![value];
    for it in 0..opts.max_iter {
        let (jmax, gmax) = argmax(&g);
        if gmax - r <= opts.tol * r {
            return Ok(OptimalDesign { pi, value, certificate: gmax, iterations: it, converged: true });
        }
        if history.len() > 100 {
            let old = history[history.len() - 101];
            if (value - old).abs() <= 1e-9 * value.abs().max(1.0) {
                if let Some((p, v, gp)) = polish_subspace(space, basis, &pi, value) {
                    (pi, value, g) = (p, v, gp);
                }
                let certificate = argmax(&g).1;
                return Ok(OptimalDesign { pi, value, certificate, iterations: it, converged: true });
            }
        }
        let mut cand: Vec<f64> = pi.iter().zip(&g).map(|(p, gi)| p * gi / r).collect();
        renormalize(&mut cand);
        let next = match subspace_state(space, basis, &cand) {
            Some((v, gc)) if v >= value => Some((cand, v, gc)),
            _ => None,
        };
        let (p, v, gn) = match next {
            Some(s) => s,
            None => {
                let line = |a: f64| {
                    let mut q: Vec<f64> = pi.iter().map(|p| p * (1.0 - a)).collect();
                    q[jmax] += a;
                    subspace_value(space, basis, &q)
                };
                let (a, _) = golden_max(line, 0.0, 1.0, 100);
                let mut q: Vec<f64> = pi.iter().map(|p| p * (1.0 - a)).collect();
                q[jmax] += a;
                match subspace_state(space, basis, &q) {
                    Some((v, gq)) if v >= value => (q, v, gq),
                    _ => return Ok(OptimalDesign { pi, value, certificate: gmax, iterations: it, converged: false }),
                }
            }
        };
        pi = p;
        value = v;
        g = gn;
        history.push(value);
    }
    let certificate = argmax(&g).1;
    Ok(OptimalDesign { pi, value, certificate, iterations: opts.max_iter, converged: false })
}

/// Newton refinement of a near-optimal subspace design. By homogeneity the
/// maximizer of −log det(Aᵀ M(w)⁻¹ A) − Σw over w ≥ 0 is r·π*, a smooth
/// problem wherever M(w) stays invertible. Returns an improvement only.
fn polish_subspace(
    space: &DesignSpace,
    basis: &DMatrix<f64>,
    pi: &[f64],
    value: f64,
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    let r = basis.ncols() as f64;
    let eval = |w: &[f64]| -> Option<Smooth> {
        let inv = linalg::spd_inverse(&info_sum(space, w))?;
        let mut s = subspace_terms(space, &inv, basis)?;
        s.value -= w.iter().sum::<f64>();
        s.grad.iter_mut().for_each(|g| *g -= 1.0);
        Some(s)
    };
    let start: Vec<f64> = pi.iter().map(|p| p * r).collect();
    let (w, _) = projected_newton(&eval, &start, &vec![false; pi.len()], 1e-13, 100).ok()?;
    let mut q = w;
    renormalize(&mut q);
    // near-singular pooled matrices make the pseudo-inverse value unreliable
    let eig = linalg::sym_eigen(&info_sum(space, &q)).eigenvalues;
    if eig.min() < 1e-8 * eig.max() {
        return None;
    }
    let (v, g) = subspace_state(space, basis, &q)?;
    (v > value).then_some((q, v, g))
}

/// Gain in information on the agent's subspace from pooling: θ* − θ.
pub fn benefit_from_collaboration(agent: &AgentProfile, space: &DesignSpace) -> Result<f64> {
    let star = solve_theta_star(agent, space, &SolverOptions::tight())?;
    if !star.converged {
        return Err(Error::NotConverged("pooled subspace design".into()));
    }
    Ok(star.value - solve_local_theta(agent, space)?)
}
