//! Second-order tools for smooth concave programs on the nonnegative
//! orthant: log-det derivatives and a projected Newton method.

use nalgebra::DMatrix;

use crate::design::DesignSpace;
use crate::error::{Error, Result};
use crate::linalg;

/// Value, gradient and Hessian of a twice-differentiable function.
pub(crate) struct Smooth {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

/// Points stacked as rows.
fn rows(space: &DesignSpace) -> DMatrix<f64> {
    DMatrix::from_fn(space.n_points(), space.dim(), |i, j| space.point(i)[j])
}

/// Derivatives in w of log det M(w) given M(w)⁻¹.
pub(crate) fn logdet_terms(space: &DesignSpace, value: f64, inv: &DMatrix<f64>) -> Smooth {
    let x = rows(space);
    let q = &x * inv * x.transpose();
    Smooth { value, grad: q.diagonal().iter().cloned().collect(), hess: -q.component_mul(&q) }
}

/// Derivatives in w of −log det(Aᵀ M(w)⁻¹ A) given M(w)⁻¹, for A with
/// full column rank. With P = M⁻¹A(AᵀM⁻¹A)⁻¹AᵀM⁻¹ the gradient is xᵢᵀPxᵢ
/// and the Hessian (xᵢᵀPxⱼ)² − 2(xᵢᵀM⁻¹xⱼ)(xᵢᵀPxⱼ).
pub(crate) fn subspace_terms(space: &DesignSpace, inv: &DMatrix<f64>, a: &DMatrix<f64>) -> Option<Smooth> {
    let b = a.transpose() * inv * a;
    let value = -linalg::spd_logdet(&b)?;
    let binv = linalg::spd_inverse(&b)?;
    let ia = inv * a;
    let p = &ia * binv * ia.transpose();
    let x = rows(space);
    let q = &x * inv * x.transpose();
    let r = &x * p * x.transpose();
    let hess = r.component_mul(&r) - 2.0 * q.component_mul(&r);
    Some(Smooth { value, grad: r.diagonal().iter().cloned().collect(), hess })
}

/// Largest change of a free coordinate under one projected gradient step
/// of unit length; zero exactly at a maximizer.
pub(crate) fn projected_residual(w: &[f64], grad: &[f64], fixed: &[bool]) -> f64 {
    (0..w.len()).filter(|&i| !fixed[i]).fold(0.0f64, |a, i| a.max(((w[i] + grad[i]).max(0.0) - w[i]).abs()))
}

/// Maximizes a smooth concave function over w ≥ 0 with the `fixed`
/// coordinates frozen, by projected Newton steps: coordinates at or near
/// zero with an outward gradient take gradient steps, the rest a Newton
/// step, followed by an Armijo search along the projection arc.
///
/// Returns the final point and the number of iterations; stops early when
/// no step improves the value any more.
pub(crate) fn projected_newton(
    eval: &dyn Fn(&[f64]) -> Option<Smooth>,
    start: &[f64],
    fixed: &[bool],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = start.len();
    let mut w = start.to_vec();
    let mut s = eval(&w).ok_or(Error::SingularM)?;
    for it in 0..max_iter {
        let res = projected_residual(&w, &s.grad, fixed);
        if res <= tol {
            return Ok((w, it));
        }
        let eps = res.min(1e-3);
        let bound: Vec<bool> = (0..n).map(|i| !fixed[i] && w[i] <= eps && s.grad[i] < 0.0).collect();
        let newton: Vec<usize> = (0..n).filter(|&i| !fixed[i] && !bound[i]).collect();
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| bound[i]) {
            d[i] = s.grad[i];
        }
        if !newton.is_empty() {
            let m = newton.len();
            let neg_h = DMatrix::from_fn(m, m, |a, b| -s.hess[(newton[a], newton[b])]);
            let g = nalgebra::DVector::from_fn(m, |a, _| s.grad[newton[a]]);
            let scale = neg_h.diagonal().amax().max(1e-300);
            let mut step = None;
            for shift in [0.0, 1e-12, 1e-9, 1e-6, 1e-3] {
                let reg = &neg_h + DMatrix::identity(m, m) * (shift * scale);
                if let Some(ch) = reg.cholesky() {
                    step = Some(ch.solve(&g));
                    break;
                }
            }
            let step = step.unwrap_or(g);
            for (a, &i) in newton.iter().enumerate() {
                d[i] = step[a];
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = (0..n).map(|i| if fixed[i] { w[i] } else { (w[i] + alpha * d[i]).max(0.0) }).collect();
            let gain: f64 = (0..n).map(|i| s.grad[i] * (cand[i] - w[i])).sum();
            if let Some(next) = eval(&cand) {
                if next.value >= s.value + 1e-4 * gain.max(0.0) && next.value.is_finite() {
                    accepted = Some((cand, next));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((cand, next)) = accepted else {
            return Ok((w, it));
        };
        let stalled = cand == w;
        w = cand;
        s = next;
        if stalled {
            return Ok((w, it + 1));
        }
    }
    Ok((w, max_iter))
}
