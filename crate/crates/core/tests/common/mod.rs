//! Shared oracles for integration tests: series-based beta integrals,
//! brute-force likelihood enumeration and small statistical helpers.
//! Everything here stays independent of the library's evaluation paths it
//! is used to check.

#![allow(dead_code)]

use stakeflow::beinf::{beinf_density, BeinfParams};
use stakeflow::model::{MatchSeries, Model, StateGrid};
use statrs::function::gamma::ln_gamma;

// integral_0^delta y^(a-1) (1-y)^(b-1) dy as the binomial series
// sum_k c_k delta^(a+k)/(a+k). The caller keeps (b-1)*delta small so the
// alternating terms decay without cancellation blow-up.
fn beta_kernel_tail(a: f64, b: f64, delta: f64) -> f64 {
    let mut coeff = 1.0f64;
    let mut total = 0.0f64;
    let mut power = delta.powf(a);
    for k in 0..400 {
        let term = coeff * power / (a + k as f64);
        total += term;
        if term.abs() < 1e-17 * total.abs().max(1e-280) {
            break;
        }
        coeff *= (k as f64 + 1.0 - b) / (k as f64 + 1.0);
        power *= delta;
    }
    total
}

fn kernel_at(a: f64, b: f64, y: f64) -> f64 {
    ((a - 1.0) * y.ln() + (b - 1.0) * (-y).ln_1p()).exp()
}

fn simpson_recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let fa = f(lo);
    let fb = f(hi);
    let fm = f(0.5 * (lo + hi));
    let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_recurse(f, lo, hi, fa, fm, fb, whole, tol, 28)
}

/// Independent evaluation of `integral_0^1 y^(a-1) (1-y)^(b-1) dy`:
/// binomial-series tails near each endpoint (with split points chosen so
/// the series is well conditioned) and adaptive Simpson on the smooth
/// middle piece.
pub fn beta_kernel_integral(a: f64, b: f64) -> f64 {
    let delta0 = (1.0 / (1.0 + (b - 1.0).abs())).min(0.5);
    let delta1 = (1.0 / (1.0 + (a - 1.0).abs())).min(0.5);
    let lower = beta_kernel_tail(a, b, delta0);
    let upper = beta_kernel_tail(b, a, delta1);
    // delta0, delta1 <= 1/2, so the remaining middle piece is smooth (and
    // empty when both tails meet at 1/2)
    let f = |y: f64| kernel_at(a, b, y);
    let mut scale: f64 = 0.0;
    for i in 0..=32 {
        let y = delta0 + (1.0 - delta1 - delta0).max(0.0) * i as f64 / 32.0;
        scale = scale.max(f(y));
    }
    let tol = 1e-13
        * (scale * (1.0 - delta1 - delta0).max(0.0))
            .max(lower + upper)
            .max(1e-300);
    let middle = adaptive_simpson(&f, delta0, 1.0 - delta1, tol);
    lower + middle + upper
}

/// Continuous BEINF mass via the series integral and a single pointwise
/// density evaluation at 1/2 (which carries the implementation's
/// normalizer): mass = dens(1/2) / kernel(1/2) * integral(kernel).
pub fn beinf_continuous_mass_oracle(params: &BeinfParams) -> f64 {
    let (a, b) = params.shapes();
    let kernel_half = 0.5f64.powf(a - 1.0) * 0.5f64.powf(b - 1.0);
    let ratio = beinf_density(0.5, params).expect("interior point") / kernel_half;
    ratio * beta_kernel_integral(a, b)
}

/// Total BEINF probability (continuous part plus masses) via the oracle.
pub fn beinf_total_probability_oracle(params: &BeinfParams) -> f64 {
    params.p + params.q + beinf_continuous_mass_oracle(params)
}

fn oracle_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

fn oracle_inv_logit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn oracle_beinf_density(y: f64, mu: f64, sigma: f64, p: f64, q: f64) -> f64 {
    if y == 0.0 {
        return p;
    }
    if y == 1.0 {
        return q;
    }
    let c = (1.0 - sigma * sigma) / (sigma * sigma);
    let a = mu * c;
    let b = (1.0 - mu) * c;
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    (1.0 - p - q) * ((a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln() - ln_beta).exp()
}

/// Brute-force likelihood: the full sum over all m^T state sequences,
/// h^T * sum f(c_i1) f(y_1|c_i1) prod f(c_it | c_i(t-1)) f(y_t|c_it),
/// with every factor computed from scalar formulas.
pub fn brute_force_log_likelihood(series: &MatchSeries, model: &Model, grid: &StateGrid) -> f64 {
    let params = &model.params;
    let m = grid.m;
    let t_len = series.len();
    let stat_sd = params.omega / (1.0 - params.phi * params.phi).sqrt();

    let emission = |t: usize, state: f64| -> f64 {
        match series.y[t - 1] {
            None => 1.0,
            Some(y) => {
                let mut eta = params.alpha0 + model.alpha_at(t) * series.prewindiff + state;
                if params.is_varying() {
                    eta += params.zeta1 * series.scorediff[t - 1] as f64
                        + params.zeta2 * series.winprobteam[t - 1];
                }
                oracle_beinf_density(y, oracle_inv_logit(eta), params.sigma, params.p, params.q)
            }
        }
    };

    let mut total = 0.0f64;
    let mut seq = vec![0usize; t_len];
    loop {
        let mut prob = grid.h
            * oracle_normal_pdf(grid.midpoints[seq[0]], 0.0, stat_sd)
            * emission(1, grid.midpoints[seq[0]]);
        for t in 2..=t_len {
            let mean = params.phi * grid.midpoints[seq[t - 2]]
                + model.beta_at(t) * series.vaepdiff[t - 2];
            prob *= grid.h
                * oracle_normal_pdf(grid.midpoints[seq[t - 1]], mean, params.omega)
                * emission(t, grid.midpoints[seq[t - 1]]);
        }
        total += prob;

        // next sequence in lexicographic order
        let mut pos = 0;
        loop {
            seq[pos] += 1;
            if seq[pos] < m {
                break;
            }
            seq[pos] = 0;
            pos += 1;
            if pos == t_len {
                return total.ln();
            }
        }
    }
}

/// Two-sided Kolmogorov-Smirnov statistic of a sample against a CDF.
pub fn ks_statistic(sample: &mut [f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sample.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}
