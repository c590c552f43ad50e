//! Forward-algorithm evaluation of the discretized state-space likelihood.
//!
//! The continuous state is replaced by a midpoint grid, turning the model
//! into an m-state HMM whose likelihood is the matrix product
//! `delta P(y_1) Gamma^(1) P(y_2) ... Gamma^(T-1) P(y_T) 1`. The recursion
//! rescales the forward vector at every step and accumulates log scale
//! factors, so nothing underflows over a full match at fine grids.

use crate::error::{Error, Result};
use crate::model::{initial_weights, inv_logit, normal_pdf, Model, StateGrid};
use crate::model::MatchSeries;
use crate::splines::penalty;
use ndarray::Array2;
use rayon::prelude::*;
use statrs::function::beta::ln_beta;

/// Result of one forward pass over a match.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub log_likelihood: f64,
    /// Per-minute posterior state-interval probabilities (rows sum to one).
    pub filtered: Array2<f64>,
    /// Per-step log scaling factors; their sum is the log-likelihood.
    pub log_scaling: Vec<f64>,
}

// Largest total exponent magnitude for which the factorized transition
// product is applied; beyond it (extreme optimizer proposals) the kernel
// falls back to evaluating densities entry by entry.
const FACTORIZATION_EXPONENT_LIMIT: f64 = 300.0;

/// Applies `alpha' = alpha * Gamma^(t)` without materializing the matrix.
///
/// The time dependence of the transition matrix enters only through the
/// scalar mean shift `s = beta_t * vaepdiff_{t-1}`, so
/// `Gamma_ij = C(s) w_i(s) A_ij v_j(s)` with a fixed matrix
/// `A_ij = exp(-(c_j - phi c_i)^2 / (2 omega^2))`. One step then costs a
/// single dense mat-vec plus O(m) exponentials.
pub(crate) struct TransitionKernel {
    a: Array2<f64>,
    midpoints: Vec<f64>,
    h: f64,
    phi: f64,
    omega: f64,
    inv_omega_sq: f64,
    base_const: f64,
    max_abs_c: f64,
}

impl TransitionKernel {
    pub(crate) fn new(model: &Model, grid: &StateGrid) -> Self {
        let phi = model.params.phi;
        let omega = model.params.omega;
        let m = grid.m;
        let inv_two_omega_sq = 0.5 / (omega * omega);
        let mut a = Array2::zeros((m, m));
        for i in 0..m {
            let ci = grid.midpoints[i];
            for j in 0..m {
                let d = grid.midpoints[j] - phi * ci;
                a[(i, j)] = (-d * d * inv_two_omega_sq).exp();
            }
        }
        let base_const = grid.h / ((2.0 * std::f64::consts::PI).sqrt() * omega);
        let max_abs_c = grid
            .midpoints
            .iter()
            .fold(0.0f64, |acc, c| acc.max(c.abs()));
        Self {
            a,
            midpoints: grid.midpoints.clone(),
            h: grid.h,
            phi,
            omega,
            inv_omega_sq: 1.0 / (omega * omega),
            base_const,
            max_abs_c,
        }
    }

    fn factorization_is_safe(&self, shift: f64) -> bool {
        let exponent = (1.0 + self.phi.abs()) * shift.abs() * self.max_abs_c * self.inv_omega_sq;
        exponent.is_finite() && exponent <= FACTORIZATION_EXPONENT_LIMIT
    }

    pub(crate) fn apply(&self, input: &[f64], shift: f64, scratch: &mut [f64], out: &mut [f64]) {
        let m = input.len();
        debug_assert_eq!(m, self.midpoints.len());
        if self.factorization_is_safe(shift) {
            let u_w = -self.phi * shift * self.inv_omega_sq;
            let u_v = shift * self.inv_omega_sq;
            let c = self.base_const * (-0.5 * shift * shift * self.inv_omega_sq).exp();
            for i in 0..m {
                scratch[i] = input[i] * (u_w * self.midpoints[i]).exp();
            }
            out.fill(0.0);
            let a = self.a.as_slice().expect("kernel matrix is contiguous");
            for i in 0..m {
                let s = scratch[i];
                if s == 0.0 {
                    continue;
                }
                let row = &a[i * m..(i + 1) * m];
                for j in 0..m {
                    out[j] += s * row[j];
                }
            }
            for j in 0..m {
                out[j] *= c * (u_v * self.midpoints[j]).exp();
            }
        } else {
            // Entry-wise densities: slower but immune to overflow for any shift.
            for j in 0..m {
                let cj = self.midpoints[j];
                let mut acc = 0.0;
                for i in 0..m {
                    if input[i] == 0.0 {
                        continue;
                    }
                    let mean = self.phi * self.midpoints[i] + shift;
                    acc += input[i] * self.h * normal_pdf(cj, mean, self.omega);
                }
                out[j] = acc;
            }
        }
    }
}

// Per-minute observation log-densities evaluated on the grid.
enum Emission {
    Missing,
    // log densities per grid cell, plus their maximum for rescaled exping
    Continuous { log_dens: Vec<f64>, max: f64 },
}

fn build_emissions(series: &MatchSeries, model: &Model, grid: &StateGrid) -> Vec<Emission> {
    let params = &model.params;
    let sigma = params.sigma;
    let shape_sum = (1.0 - sigma * sigma) / (sigma * sigma);
    let ln_cont = (1.0 - params.p - params.q).ln();
    let m = grid.m;
    let t_len = series.len();

    // The non-state predictor is constant over the match for the baseline
    // variant, so shape parameters per grid cell can be shared across time.
    let offsets: Vec<f64> = (1..=t_len)
        .map(|t| model.predictor_offset(series, t))
        .collect();
    let offset_constant = offsets.iter().all(|o| *o == offsets[0]);

    let cell_shapes = |offset: f64| -> Vec<(f64, f64, f64)> {
        grid.midpoints
            .iter()
            .map(|&c| {
                let mu = inv_logit(offset + c);
                let a = mu * shape_sum;
                let b = (1.0 - mu) * shape_sum;
                // degenerate shapes (mu or sigma rounded onto a boundary)
                // force a zero density rather than a ln_beta panic
                if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
                    (a, b, ln_beta(a, b))
                } else {
                    (a, b, f64::INFINITY)
                }
            })
            .collect()
    };
    let shared_shapes = if offset_constant {
        Some(cell_shapes(offsets[0]))
    } else {
        None
    };

    (0..t_len)
        .map(|idx| match series.y[idx] {
            None => Emission::Missing,
            Some(y) if y == 0.0 => {
                let v = params.p.ln();
                Emission::Continuous {
                    log_dens: vec![v; m],
                    max: v,
                }
            }
            Some(y) if y == 1.0 => {
                let v = params.q.ln();
                Emission::Continuous {
                    log_dens: vec![v; m],
                    max: v,
                }
            }
            Some(y) => {
                let ln_y = y.ln();
                let ln_1my = (1.0 - y).ln();
                let owned;
                let shapes = match &shared_shapes {
                    Some(s) => s,
                    None => {
                        owned = cell_shapes(offsets[idx]);
                        &owned
                    }
                };
                let mut max = f64::NEG_INFINITY;
                let log_dens: Vec<f64> = shapes
                    .iter()
                    .map(|&(a, b, ln_b)| {
                        let v = ln_cont + (a - 1.0) * ln_y + (b - 1.0) * ln_1my - ln_b;
                        if v > max {
                            max = v;
                        }
                        v
                    })
                    .collect();
                Emission::Continuous { log_dens, max }
            }
        })
        .collect()
}

fn neg_inf_result(t_len: usize, m: usize, want_filtered: bool) -> ForwardResult {
    ForwardResult {
        log_likelihood: f64::NEG_INFINITY,
        filtered: if want_filtered {
            Array2::zeros((t_len, m))
        } else {
            Array2::zeros((0, 0))
        },
        log_scaling: vec![f64::NEG_INFINITY; t_len],
    }
}

fn forward_core(
    series: &MatchSeries,
    model: &Model,
    grid: &StateGrid,
    kernel: &TransitionKernel,
    want_filtered: bool,
) -> ForwardResult {
    let m = grid.m;
    let t_len = series.len();
    let emissions = build_emissions(series, model, grid);

    let mut filtered = if want_filtered {
        Array2::zeros((t_len, m))
    } else {
        Array2::zeros((0, 0))
    };
    let mut log_scaling = Vec::with_capacity(t_len);
    let mut alpha = initial_weights(model, grid);
    let mut predicted = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut log_likelihood = 0.0;

    for t in 1..=t_len {
        if t > 1 {
            let shift = model.beta_at(t) * series.vaepdiff[t - 2];
            kernel.apply(&alpha, shift, &mut scratch, &mut predicted);
            std::mem::swap(&mut alpha, &mut predicted);
        }
        let step_log = match &emissions[t - 1] {
            Emission::Missing => {
                let total: f64 = alpha.iter().sum();
                if !(total > 0.0) || !total.is_finite() {
                    return neg_inf_result(t_len, m, want_filtered);
                }
                for v in alpha.iter_mut() {
                    *v /= total;
                }
                total.ln()
            }
            Emission::Continuous { log_dens, max } => {
                if !max.is_finite() {
                    return neg_inf_result(t_len, m, want_filtered);
                }
                let mut total = 0.0;
                for (v, ld) in alpha.iter_mut().zip(log_dens) {
                    *v *= (ld - max).exp();
                    total += *v;
                }
                if !(total > 0.0) || !total.is_finite() {
                    return neg_inf_result(t_len, m, want_filtered);
                }
                for v in alpha.iter_mut() {
                    *v /= total;
                }
                total.ln() + max
            }
        };
        if !step_log.is_finite() {
            return neg_inf_result(t_len, m, want_filtered);
        }
        log_likelihood += step_log;
        log_scaling.push(step_log);
        if want_filtered {
            filtered.row_mut(t - 1).assign(&ndarray::ArrayView1::from(&alpha[..]));
        }
    }

    ForwardResult {
        log_likelihood,
        filtered,
        log_scaling,
    }
}

/// Forward pass over one match: log-likelihood, filtered state
/// probabilities and per-step log scaling factors.
///
/// Invalid parameter regions reached by an optimizer surface as a
/// `-inf` log-likelihood rather than an error.
pub fn forward(series: &MatchSeries, model: &Model, grid: &StateGrid) -> Result<ForwardResult> {
    series.validate()?;
    let kernel = TransitionKernel::new(model, grid);
    Ok(forward_core(series, model, grid, &kernel, true))
}

/// Filtered state probabilities for forecasting. Observations with zero
/// predictive mass under the model (e.g. y = 1 when q = 0) cannot be
/// conditioned on; the filter treats them as missing for the state update,
/// so later one-step-ahead forecasts stay defined (the quantile comparison
/// still flags such observations as outliers).
pub(crate) struct RobustFilter {
    pub filtered: Array2<f64>,
}

pub(crate) fn forward_robust(
    series: &MatchSeries,
    model: &Model,
    grid: &StateGrid,
    kernel: &TransitionKernel,
) -> Result<RobustFilter> {
    let m = grid.m;
    let t_len = series.len();
    let emissions = build_emissions(series, model, grid);
    let mut filtered = Array2::zeros((t_len, m));
    let mut alpha = initial_weights(model, grid);
    let mut predicted = vec![0.0; m];
    let mut scratch = vec![0.0; m];

    for t in 1..=t_len {
        if t > 1 {
            let shift = model.beta_at(t) * series.vaepdiff[t - 2];
            kernel.apply(&alpha, shift, &mut scratch, &mut predicted);
            std::mem::swap(&mut alpha, &mut predicted);
        }
        let prior_total: f64 = alpha.iter().sum();
        if !(prior_total > 0.0) || !prior_total.is_finite() {
            return Err(Error::Numerical(format!(
                "state prediction degenerated at minute {t}"
            )));
        }
        let updated = match &emissions[t - 1] {
            Emission::Missing => false,
            Emission::Continuous { log_dens, max } => {
                if max.is_finite() {
                    let mut total_mass = 0.0;
                    for i in 0..m {
                        scratch[i] = alpha[i] * (log_dens[i] - max).exp();
                        total_mass += scratch[i];
                    }
                    if total_mass > 0.0 && total_mass.is_finite() {
                        for i in 0..m {
                            alpha[i] = scratch[i] / total_mass;
                        }
                        true
                    } else {
                        false
                    }
                } else {
                    false
                }
            }
        };
        if !updated {
            for v in alpha.iter_mut() {
                *v /= prior_total;
            }
        }
        filtered
            .row_mut(t - 1)
            .assign(&ndarray::ArrayView1::from(&alpha[..]));
    }
    Ok(RobustFilter { filtered })
}

/// Kahan-compensated sum; `-inf` contributions dominate and NaN propagates.
pub(crate) fn stable_sum(values: &[f64]) -> f64 {
    if values.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    if values.iter().any(|v| *v == f64::NEG_INFINITY) {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Joint log-likelihood over independent matches. Matches are evaluated in
/// parallel; the per-match values are summed in a fixed order with
/// compensated summation, so the result does not depend on thread count.
pub fn joint_log_likelihood(
    matches: &[MatchSeries],
    model: &Model,
    grid: &StateGrid,
) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::InvalidConfig(
            "joint likelihood needs at least one match".into(),
        ));
    }
    let kernel = TransitionKernel::new(model, grid);
    let per_match: Vec<f64> = matches
        .par_iter()
        .map(|series| forward_core(series, model, grid, &kernel, false).log_likelihood)
        .collect();
    Ok(stable_sum(&per_match))
}

/// Penalized objective for the varying-coefficient model:
/// joint log-likelihood minus the second-difference penalties.
pub fn penalized_objective(
    matches: &[MatchSeries],
    model: &Model,
    grid: &StateGrid,
    lambda_alpha: f64,
    lambda_beta: f64,
) -> Result<f64> {
    let (nu_alpha, nu_beta) = match (&model.params.alpha, &model.params.beta) {
        (crate::model::Effect::Varying(a), crate::model::Effect::Varying(b)) => (a, b),
        _ => {
            return Err(Error::InvalidConfig(
                "penalized objective requires the varying-coefficient variant".into(),
            ))
        }
    };
    let ll = joint_log_likelihood(matches, model, grid)?;
    Ok(ll - penalty(nu_alpha, lambda_alpha)? - penalty(nu_beta, lambda_beta)?)
}

/// Relative change of the joint log-likelihood when the grid is refined,
/// used as a convergence diagnostic for the discretization.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GridConvergence {
    pub m_coarse: usize,
    pub m_fine: usize,
    pub loglik_coarse: f64,
    pub loglik_fine: f64,
    pub relative_change: f64,
}

pub fn grid_convergence(
    matches: &[MatchSeries],
    model: &Model,
    span_sds: f64,
    m_coarse: usize,
    m_fine: usize,
) -> Result<GridConvergence> {
    let coarse = crate::model::build_grid(&model.params, m_coarse, span_sds)?;
    let fine = crate::model::build_grid(&model.params, m_fine, span_sds)?;
    let ll_coarse = joint_log_likelihood(matches, model, &coarse)?;
    let ll_fine = joint_log_likelihood(matches, model, &fine)?;
    Ok(GridConvergence {
        m_coarse,
        m_fine,
        loglik_coarse: ll_coarse,
        loglik_fine: ll_fine,
        relative_change: (ll_coarse - ll_fine).abs() / ll_fine.abs(),
    })
}

/// BEINF parameters of the observation distribution at one grid cell.
#[cfg(test)]
pub(crate) fn cell_observation_params(
    model: &Model,
    series: &MatchSeries,
    t: usize,
    state: f64,
) -> crate::beinf::BeinfParams {
    let mu = inv_logit(model.predictor_offset(series, t) + state);
    crate::beinf::BeinfParams {
        mu,
        sigma: model.params.sigma,
        p: model.params.p,
        q: model.params.q,
    }
}
