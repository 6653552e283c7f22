//! Powell-style hybrid solver for square nonlinear systems `F(x) = 0`.
//!
//! Each iteration takes a dogleg step inside a trust region: the Gauss-Newton
//! step when it fits, otherwise a point on the segment between the scaled
//! steepest-descent (Cauchy) point of `|F|^2` and the Gauss-Newton point. The
//! Jacobian starts as a forward-difference approximation and is then
//! maintained by Broyden rank-one updates. It is rebuilt by finite
//! differences after two consecutive rejected steps, or when the current
//! approximation is numerically singular.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

const SHRINK_BELOW: f64 = 0.25;
const EXPAND_ABOVE: f64 = 0.75;
const ACCEPT_ABOVE: f64 = 1e-4;
const REJECTS_BEFORE_REFRESH: usize = 2;
const SINGULAR_RCOND: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepType {
    GaussNewton,
    DoglegInterior,
    Cauchy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual_max_norm: f64,
    pub trust_radius: f64,
    pub step_type: Option<StepType>,
    pub accepted: bool,
    pub jacobian_refreshed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct HybridOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Absolute forward-difference step; `None` uses `sqrt(eps) * max(|x_j|, 1)`.
    pub fd_step: Option<f64>,
    pub initial_radius: f64,
}

impl Default for HybridOptions {
    fn default() -> Self {
        HybridOptions {
            tolerance: 1e-10,
            max_iterations: 200,
            fd_step: None,
            initial_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HybridOutcome {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    pub residual_max_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
    pub function_evaluations: usize,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> Option<Vec<f64>>> Counted<F> {
    fn call(&mut self, x: &[f64]) -> Option<Vec<f64>> {
        self.evals += 1;
        (self.f)(x).filter(|v| v.iter().all(|y| y.is_finite()))
    }
}

fn fd_jacobian<F: FnMut(&[f64]) -> Option<Vec<f64>>>(
    f: &mut Counted<F>,
    x: &[f64],
    fx: &[f64],
    step: Option<f64>,
) -> Option<DMatrix<f64>> {
    let n = x.len();
    let mut jac = DMatrix::zeros(fx.len(), n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = step.unwrap_or_else(|| f64::EPSILON.sqrt() * x[j].abs().max(1.0));
        xp[j] = x[j] + h;
        let h = xp[j] - x[j];
        let fp = f.call(&xp)?;
        for i in 0..fx.len() {
            jac[(i, j)] = (fp[i] - fx[i]) / h;
        }
        xp[j] = x[j];
    }
    Some(jac)
}

fn gauss_newton(jac: &DMatrix<f64>, fx: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = jac.clone().lu();
    let u = lu.u();
    let diag = u.diagonal();
    let dmax = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let dmin = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if !(dmax > 0.0) || dmin / dmax < SINGULAR_RCOND {
        return None;
    }
    lu.solve(&(-fx)).filter(|p| p.iter().all(|v| v.is_finite()))
}

fn dogleg(
    jac: &DMatrix<f64>,
    fx: &DVector<f64>,
    gn: Option<&DVector<f64>>,
    radius: f64,
) -> (DVector<f64>, StepType) {
    if let Some(gn) = gn {
        if gn.norm() <= radius {
            return (gn.clone(), StepType::GaussNewton);
        }
    }
    let grad = jac.transpose() * fx;
    let gnorm = grad.norm();
    let jg = jac * &grad;
    let jg2 = jg.norm_squared();
    if gnorm == 0.0 || jg2 == 0.0 {
        // only reachable without a usable Gauss-Newton step
        let p = gn.map(|g| g * (radius / g.norm())).unwrap_or_else(|| grad.clone());
        return (p, StepType::Cauchy);
    }
    let cauchy = &grad * (-gnorm * gnorm / jg2);
    let cnorm = cauchy.norm();
    match gn {
        Some(gn) if cnorm < radius => {
            // largest tau in [0, 1] with |c + tau (gn - c)| = radius
            let d = gn - &cauchy;
            let a = d.norm_squared();
            let b = 2.0 * cauchy.dot(&d);
            let c = cnorm * cnorm - radius * radius;
            let tau = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
            (&cauchy + d * tau.clamp(0.0, 1.0), StepType::DoglegInterior)
        }
        _ => (grad * (-radius / gnorm), StepType::Cauchy),
    }
}

/// Solves `f(x) = 0` from `x0`. `f` returns `None` where it cannot be evaluated
/// (the step is then treated as rejected).
pub fn solve<F>(f: F, x0: &[f64], opts: &HybridOptions) -> HybridOutcome
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let mut f = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut trace = Vec::new();

    let Some(mut fx) = f.call(&x) else {
        return HybridOutcome {
            residual: vec![f64::NAN; x.len()],
            residual_max_norm: f64::INFINITY,
            x,
            iterations: 0,
            converged: false,
            trace,
            function_evaluations: f.evals,
        };
    };
    let mut best = (x.clone(), fx.clone(), max_norm(&fx));
    let finish = |x: Vec<f64>, fx: Vec<f64>, it, conv, trace, evals| {
        let n = max_norm(&fx);
        HybridOutcome {
            x,
            residual: fx,
            residual_max_norm: n,
            iterations: it,
            converged: conv,
            trace,
            function_evaluations: evals,
        }
    };
    if best.2 <= opts.tolerance {
        return finish(x, fx, 0, true, trace, f.evals);
    }

    let mut jac = match fd_jacobian(&mut f, &x, &fx, opts.fd_step) {
        Some(j) => j,
        None => return finish(x, fx, 0, false, trace, f.evals),
    };
    let mut radius = opts.initial_radius;
    let mut rejects = 0;
    let mut fresh = true;
    let mut stalled_fresh = 0;

    for it in 1..=opts.max_iterations {
        let mut refreshed = false;
        let fv = DVector::from_column_slice(&fx);
        let mut gn = gauss_newton(&jac, &fv);
        if gn.is_none() && !fresh {
            if let Some(j) = fd_jacobian(&mut f, &x, &fx, opts.fd_step) {
                jac = j;
                refreshed = true;
                fresh = true;
                gn = gauss_newton(&jac, &fv);
            }
        }
        let (p, step_type) = dogleg(&jac, &fv, gn.as_ref(), radius);
        let pnorm = p.norm();
        let x_new: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + b).collect();

        let mut accepted = false;
        match f.call(&x_new) {
            None => {
                radius = 0.5 * radius.min(pnorm);
                rejects += 1;
            }
            Some(f_new) => {
                let f0 = fv.norm_squared();
                let f1: f64 = f_new.iter().map(|v| v * v).sum();
                let lin = &fv + &jac * &p;
                let predicted = f0 - lin.norm_squared();
                let actual = f0 - f1;
                let ratio = if predicted > 0.0 { actual / predicted } else { -1.0 };

                if ratio < SHRINK_BELOW {
                    radius = 0.5 * radius.min(pnorm);
                } else if ratio > EXPAND_ABOVE {
                    radius = radius.max(2.0 * pnorm);
                }

                // Broyden: J += (y - J s) s^T / (s^T s)
                let y = DVector::from_column_slice(&f_new) - &fv;
                let s2 = p.norm_squared();
                if s2 > 0.0 {
                    let corr = (y - &jac * &p) / s2;
                    jac += corr * p.transpose();
                    fresh = false;
                }

                if ratio > ACCEPT_ABOVE {
                    accepted = true;
                    rejects = 0;
                    x = x_new;
                    fx = f_new;
                    let n = max_norm(&fx);
                    if n < best.2 {
                        best = (x.clone(), fx.clone(), n);
                    }
                } else {
                    rejects += 1;
                }
            }
        }

        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rejects >= REJECTS_BEFORE_REFRESH || radius < 1e-14 * scale {
            if radius < 1e-14 * scale {
                if fresh {
                    stalled_fresh += 1;
                }
                radius = opts.initial_radius.min(1e3 * radius.max(1e-12 * scale));
            }
            if let Some(j) = fd_jacobian(&mut f, &x, &fx, opts.fd_step) {
                jac = j;
                refreshed = true;
                fresh = true;
            }
            rejects = 0;
        }

        let norm = max_norm(&fx);
        trace.push(IterationRecord {
            iteration: it,
            residual_max_norm: norm,
            trust_radius: radius,
            step_type: Some(step_type),
            accepted,
            jacobian_refreshed: refreshed,
        });
        if norm <= opts.tolerance {
            return finish(x, fx, it, true, trace, f.evals);
        }
        if stalled_fresh >= 3 {
            break;
        }
    }
    let iters = trace.len();
    finish(best.0, best.1, iters, false, trace, f.evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_linear_system_in_one_step() {
        let f = |x: &[f64]| Some(vec![2.0 * x[0] + x[1] - 3.0, x[0] - x[1]]);
        let out = solve(f, &[0.0, 0.0], &HybridOptions { initial_radius: 10.0, ..Default::default() });
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-9 && (out.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rosenbrock_system() {
        let f = |x: &[f64]| Some(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let out = solve(f, &[-1.2, 1.0], &HybridOptions::default());
        assert!(out.converged, "{:?}", out.trace.last());
        assert!((out.x[0] - 1.0).abs() < 1e-9 && (out.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn powell_badly_scaled() {
        let f = |x: &[f64]| {
            Some(vec![
                1e4 * x[0] * x[1] - 1.0,
                (-x[0]).exp() + (-x[1]).exp() - 1.0001,
            ])
        };
        let out = solve(f, &[0.0, 1.0], &HybridOptions { max_iterations: 500, ..Default::default() });
        assert!(out.converged, "{:?}", out.trace.last());
        assert!(out.residual_max_norm <= 1e-10);
    }

    #[test]
    fn recovers_from_undefined_regions() {
        // sqrt is undefined for negative arguments
        let f = |x: &[f64]| (x[0] >= 0.0).then(|| vec![x[0].sqrt() - 0.5]);
        let out = solve(f, &[4.0], &HybridOptions { initial_radius: 100.0, ..Default::default() });
        assert!(out.converged);
        assert!((out.x[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn reports_failure_without_root() {
        let f = |x: &[f64]| Some(vec![x[0] * x[0] + 1.0]);
        let out = solve(f, &[3.0], &HybridOptions { max_iterations: 50, ..Default::default() });
        assert!(!out.converged);
        assert!(out.residual_max_norm >= 1.0);
        assert!(!out.trace.is_empty());
    }

    #[test]
    fn dogleg_respects_radius() {
        let jac = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 0.5, 2.0]);
        let fx = DVector::from_column_slice(&[4.0, -7.0]);
        let gn = gauss_newton(&jac, &fx).unwrap();
        for r in [0.01, 0.5, 1.0, 2.0, 100.0] {
            let (p, kind) = dogleg(&jac, &fx, Some(&gn), r);
            assert!(p.norm() <= r * (1.0 + 1e-12));
            if kind == StepType::GaussNewton {
                assert!((p - &gn).norm() < 1e-14);
            } else {
                assert!((p.norm() - r).abs() < 1e-9 * r);
            }
        }
    }
}
