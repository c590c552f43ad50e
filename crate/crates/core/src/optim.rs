//! Dense BFGS minimizer with backtracking line search plus central-difference
//! gradient and Hessian helpers. Parameter vectors here are short (tens of
//! entries), so dense updates and finite differences are the right trade-off;
//! the expensive part is always the objective itself.

use ndarray::{Array1, Array2};
use std::cell::Cell;

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Converged when `||grad||_inf <= grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    pub max_line_search_steps: usize,
    /// Diagonal of the initial inverse-Hessian approximation. Stiff
    /// quadratic terms in the objective (large smoothing penalties) need
    /// their curvature reflected here or the line search crawls.
    pub initial_inverse_diag: Option<Vec<f64>>,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tol: 1e-5,
            max_line_search_steps: 40,
            initial_inverse_diag: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimStatus {
    Converged,
    MaxIterations,
    /// Line search could not improve the objective; best point returned.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub objective_evals: usize,
    pub status: OptimStatus,
}

fn grad_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.abs())
}

fn hess_step(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + x.abs())
}

/// Central-difference gradient. Falls back to a one-sided difference when a
/// probe lands in a non-finite (invalid-parameter) region.
pub fn gradient_central<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], f_at_x: f64) -> Vec<f64> {
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut probe = x.to_vec();
    for i in 0..n {
        let h = grad_step(x[i]);
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else if fp.is_finite() && f_at_x.is_finite() {
            (fp - f_at_x) / h
        } else if fm.is_finite() && f_at_x.is_finite() {
            (f_at_x - fm) / h
        } else {
            0.0
        };
    }
    grad
}

/// Central-difference Hessian (symmetric by construction).
pub fn hessian_central<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Array2<f64> {
    let n = x.len();
    let f0 = f(x);
    let mut hess = Array2::zeros((n, n));
    let mut probe = x.to_vec();
    for i in 0..n {
        let hi = hess_step(x[i]);
        probe[i] = x[i] + hi;
        let fp = f(&probe);
        probe[i] = x[i] - hi;
        let fm = f(&probe);
        probe[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
    }
    for i in 0..n {
        let hi = hess_step(x[i]);
        for j in i + 1..n {
            let hj = hess_step(x[j]);
            let mut eval_at = |di: f64, dj: f64| {
                probe[i] = x[i] + di;
                probe[j] = x[j] + dj;
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let fpp = eval_at(hi, hj);
            let fpm = eval_at(hi, -hj);
            let fmp = eval_at(-hi, hj);
            let fmm = eval_at(-hi, -hj);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Minimize `f` starting from `x0` with BFGS. The objective may return
/// non-finite values for invalid regions; the line search backs away from
/// them.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    let evals = Cell::new(0usize);
    let obj = |x: &[f64]| {
        evals.set(evals.get() + 1);
        f(x)
    };

    let mut x = Array1::from(x0.to_vec());
    let mut fx = obj(x.as_slice().unwrap());
    if !fx.is_finite() {
        return OptimResult {
            x: x.to_vec(),
            value: fx,
            gradient: vec![f64::NAN; n],
            iterations: 0,
            objective_evals: evals.get(),
            status: OptimStatus::Stalled,
        };
    }
    let mut grad = Array1::from(gradient_central(&obj, x.as_slice().unwrap(), fx));
    let mut h_inv = Array2::<f64>::eye(n);
    if let Some(diag) = &opts.initial_inverse_diag {
        for (i, d) in diag.iter().enumerate().take(n) {
            if *d > 0.0 && d.is_finite() {
                h_inv[(i, i)] = *d;
            }
        }
    }
    let scaling_pending = opts.initial_inverse_diag.is_none();
    let mut first_update_pending = scaling_pending;

    let converged = |fx: f64, grad: &Array1<f64>| {
        inf_norm(grad.as_slice().unwrap()) <= opts.grad_tol * fx.abs().max(1.0)
    };

    let reset_metric = |h_inv: &mut Array2<f64>| {
        *h_inv = Array2::eye(n);
        if let Some(diag) = &opts.initial_inverse_diag {
            for (i, d) in diag.iter().enumerate().take(n) {
                if *d > 0.0 && d.is_finite() {
                    h_inv[(i, i)] = *d;
                }
            }
        }
    };

    let mut iterations = 0;
    let mut stagnant = 0usize;
    let mut status = OptimStatus::MaxIterations;
    if converged(fx, &grad) {
        status = OptimStatus::Converged;
    } else {
        'outer: for iter in 1..=opts.max_iterations {
            iterations = iter;
            let mut direction = -h_inv.dot(&grad);
            let mut slope = direction.dot(&grad);
            if !(slope < 0.0) {
                // Not a descent direction (stale curvature); reset the metric.
                reset_metric(&mut h_inv);
                direction = -h_inv.dot(&grad);
                slope = direction.dot(&grad);
            }

            // Backtracking Armijo line search; when the accumulated metric
            // cannot produce an acceptable step, retry once from a fresh one.
            let mut accepted = None;
            for attempt in 0..2 {
                let mut step = 1.0;
                for _ in 0..opts.max_line_search_steps {
                    let candidate = &x + &(step * &direction);
                    let fc = obj(candidate.as_slice().unwrap());
                    if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                        accepted = Some((candidate, fc));
                        break;
                    }
                    step *= 0.5;
                }
                if accepted.is_some() || attempt == 1 {
                    break;
                }
                reset_metric(&mut h_inv);
                direction = -h_inv.dot(&grad);
                slope = direction.dot(&grad);
                if !(slope < 0.0) {
                    break;
                }
            }
            let Some((x_new, f_new)) = accepted else {
                status = if converged(fx, &grad) {
                    OptimStatus::Converged
                } else {
                    OptimStatus::Stalled
                };
                break 'outer;
            };

            let grad_new =
                Array1::from(gradient_central(&obj, x_new.as_slice().unwrap(), f_new));
            let s = &x_new - &x;
            let y = &grad_new - &grad;
            let sy = s.dot(&y);
            if sy > 1e-10 * s.dot(&s).sqrt() * y.dot(&y).sqrt() {
                if first_update_pending {
                    let scale = sy / y.dot(&y);
                    if scale.is_finite() && scale > 0.0 {
                        h_inv *= scale;
                    }
                    first_update_pending = false;
                }
                // H <- (I - rho s y') H (I - rho y s') + rho s s'
                let rho = 1.0 / sy;
                let hy = h_inv.dot(&y);
                let yhy = y.dot(&hy);
                let s_col = s.view().insert_axis(ndarray::Axis(1));
                let hy_col = hy.view().insert_axis(ndarray::Axis(1));
                let outer_s_hy = s_col.dot(&hy_col.t());
                let outer_ss = s_col.dot(&s_col.t());
                h_inv = h_inv - rho * (&outer_s_hy + &outer_s_hy.t())
                    + (rho * rho * yhy + rho) * outer_ss;
            }

            let f_change = (fx - f_new).abs();
            x = x_new;
            fx = f_new;
            grad = grad_new;
            if converged(fx, &grad) {
                status = OptimStatus::Converged;
                break;
            }
            // FD-gradient progress can stagnate for a few iterations and
            // recover, so demand persistent stagnation before giving up
            if f_change <= 1e-12 * (1.0 + fx.abs()) {
                stagnant += 1;
                if stagnant >= 5 {
                    status = OptimStatus::Stalled;
                    break;
                }
            } else {
                stagnant = 0;
            }
        }
    }

    OptimResult {
        x: x.to_vec(),
        value: fx,
        gradient: grad.to_vec(),
        iterations,
        objective_evals: evals.get(),
        status,
    }
}
