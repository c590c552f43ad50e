//! Beta-inflated distribution (BEINF): a beta distribution on (0,1) with
//! point masses `p` at 0 and `q` at 1.
//!
//! The beta component is parametrised by its mean `mu` and standard
//! deviation `sigma`, which map to the usual shape parameters via
//! `a = mu(1-sigma^2)/sigma^2`, `b = (1-mu)(1-sigma^2)/sigma^2`.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution};
use statrs::function::beta::{beta_reg, ln_beta};

/// Parameters of a beta-inflated distribution.
///
/// Invariants: `0 < mu < 1`, `0 < sigma < 1`, `p >= 0`, `q >= 0`,
/// `p + q <= 1`. Equality `p + q = 1` is the degenerate two-point case
/// (no continuous component); model fitting stays in the open region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeinfParams {
    pub mu: f64,
    pub sigma: f64,
    pub p: f64,
    pub q: f64,
}

impl BeinfParams {
    pub fn new(mu: f64, sigma: f64, p: f64, q: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beinf mu must lie in (0,1), got {mu}"
            )));
        }
        if !(sigma > 0.0 && sigma < 1.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beinf sigma must lie in (0,1), got {sigma}"
            )));
        }
        if !(p >= 0.0) || !(q >= 0.0) || !(p + q <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beinf masses must satisfy p,q >= 0 and p+q <= 1, got p={p}, q={q}"
            )));
        }
        Ok(Self { mu, sigma, p, q })
    }

    /// Shape parameters `(a, b)` of the beta component.
    pub fn shapes(&self) -> (f64, f64) {
        shapes_unchecked(self.mu, self.sigma)
    }
}

fn shapes_unchecked(mu: f64, sigma: f64) -> (f64, f64) {
    let c = (1.0 - sigma * sigma) / (sigma * sigma);
    (mu * c, (1.0 - mu) * c)
}

/// Map the (mean, sd) parametrisation of the beta component to shape
/// parameters `(a, b)`. Both are strictly positive for valid inputs.
pub fn shapes_from_mean_sd(mu: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0 && mu < 1.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mu must lie in (0,1), got {mu}"
        )));
    }
    if !(sigma > 0.0 && sigma < 1.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must lie in (0,1), got {sigma}"
        )));
    }
    Ok(shapes_unchecked(mu, sigma))
}

/// Log-density of the BEINF distribution. This is the primitive the
/// likelihood code builds on; `beinf_density` exponentiates it.
///
/// Returns `-inf` where the density is zero (e.g. y = 0 with p = 0).
pub fn beinf_log_density(y: f64, params: &BeinfParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!(
            "beinf density requires y in [0,1], got {y}"
        )));
    }
    if y == 0.0 {
        return Ok(params.p.ln());
    }
    if y == 1.0 {
        return Ok(params.q.ln());
    }
    let cont = 1.0 - params.p - params.q;
    if cont <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (a, b) = params.shapes();
    if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
        // shapes rounded onto a boundary (sigma within an ulp of 1)
        return Ok(f64::NEG_INFINITY);
    }
    Ok(cont.ln() + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln() - ln_beta(a, b))
}

/// BEINF density: `p` at 0, `q` at 1, `(1-p-q) h(y; a, b)` on (0,1).
pub fn beinf_density(y: f64, params: &BeinfParams) -> Result<f64> {
    Ok(beinf_log_density(y, params)?.exp())
}

/// CDF of the BEINF distribution, with the point masses handled exactly.
pub fn beinf_cdf(y: f64, params: &BeinfParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!(
            "beinf cdf requires y in [0,1], got {y}"
        )));
    }
    if y >= 1.0 {
        return Ok(1.0);
    }
    let mut acc = 0.0;
    if y >= 0.0 {
        acc += params.p;
    }
    if y > 0.0 {
        let (a, b) = params.shapes();
        acc += (1.0 - params.p - params.q) * beta_reg(a, b, y);
    }
    Ok(acc)
}

/// Mean of the BEINF distribution: `(1 - p - q) mu + q`.
pub fn beinf_mean(params: &BeinfParams) -> f64 {
    (1.0 - params.p - params.q) * params.mu + params.q
}

/// Draw one BEINF variate: 0 with probability `p`, 1 with probability `q`,
/// otherwise a beta(a, b) variate.
pub fn beinf_sample<R: Rng + ?Sized>(params: &BeinfParams, rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    if u < params.p {
        return 0.0;
    }
    if u < params.p + params.q {
        return 1.0;
    }
    let (a, b) = params.shapes();
    // Beta::new only rejects non-positive shapes, which valid params exclude.
    let beta = BetaDist::new(a, b).expect("valid params imply positive shapes");
    beta.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_uniform_case() {
        let (a, b) = shapes_from_mean_sd(0.5, (1.0f64 / 3.0).sqrt()).unwrap();
        assert_relative_eq!(a, 1.0, max_relative = 1e-12);
        assert_relative_eq!(b, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn shapes_hand_case() {
        let (a, b) = shapes_from_mean_sd(0.25, 0.5).unwrap();
        assert_relative_eq!(a, 0.75, max_relative = 1e-12);
        assert_relative_eq!(b, 2.25, max_relative = 1e-12);
    }

    #[test]
    fn shapes_mean_round_trip() {
        let (a, b) = shapes_from_mean_sd(0.493, 0.300).unwrap();
        assert_relative_eq!(a / (a + b), 0.493, epsilon = 1e-12);
        // sigma round trip: a + b = (1 - sigma^2)/sigma^2, so
        // sigma = 1/sqrt(a + b + 1)
        let sigma = (1.0 / (a + b + 1.0)).sqrt();
        assert_relative_eq!(sigma, 0.300, epsilon = 1e-10);
        // and the beta distribution's own sd is sigma * sqrt(mu (1 - mu))
        let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
        assert_relative_eq!(sd, 0.300 * (0.493f64 * 0.507).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn shapes_domain_errors() {
        assert!(shapes_from_mean_sd(0.0, 0.5).is_err());
        assert!(shapes_from_mean_sd(1.0, 0.5).is_err());
        assert!(shapes_from_mean_sd(0.5, 0.0).is_err());
        assert!(shapes_from_mean_sd(0.5, 1.0).is_err());
    }

    #[test]
    fn density_point_masses() {
        let params = BeinfParams::new(0.4, 0.2, 0.1, 0.2).unwrap();
        assert_relative_eq!(beinf_density(0.0, &params).unwrap(), 0.1, epsilon = 1e-15);
        assert_relative_eq!(beinf_density(1.0, &params).unwrap(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn density_uniform_case() {
        let params = BeinfParams::new(0.5, (1.0f64 / 3.0).sqrt(), 0.0, 0.0).unwrap();
        assert_relative_eq!(beinf_density(0.3, &params).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn density_matches_high_precision_value() {
        // Frozen from a 30-digit evaluation of y^(a-1)(1-y)^(b-1)/B(a,b)
        // at y = 0.5, mu = 0.493, sigma = 0.300.
        let params = BeinfParams::new(0.493, 0.300, 0.0, 0.0).unwrap();
        let d = beinf_density(0.5, &params).unwrap();
        assert_relative_eq!(d, 2.4725384639062857, epsilon = 1e-10);
    }

    #[test]
    fn density_domain_error() {
        let params = BeinfParams::new(0.5, 0.3, 0.0, 0.0).unwrap();
        assert!(beinf_density(-0.1, &params).is_err());
        assert!(beinf_density(1.1, &params).is_err());
    }

    #[test]
    fn density_nonnegative_on_grid() {
        let params = BeinfParams::new(0.2, 0.7, 0.05, 0.1).unwrap();
        for k in 0..=100 {
            let y = k as f64 / 100.0;
            assert!(beinf_density(y, &params).unwrap() >= 0.0);
        }
    }

    #[test]
    fn sample_degenerate_masses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all_zero = BeinfParams::new(0.5, 0.3, 1.0, 0.0).unwrap();
        let all_one = BeinfParams::new(0.5, 0.3, 0.0, 1.0).unwrap();
        for _ in 0..200 {
            assert_eq!(beinf_sample(&all_zero, &mut rng), 0.0);
            assert_eq!(beinf_sample(&all_one, &mut rng), 1.0);
        }
    }

    #[test]
    fn sample_monte_carlo_mean() {
        let params = BeinfParams::new(0.5, (1.0f64 / 3.0).sqrt(), 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| beinf_sample(&params, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn sample_deterministic_given_seed() {
        let params = BeinfParams::new(0.3, 0.25, 0.1, 0.05).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| beinf_sample(&params, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn cdf_endpoints_and_mass() {
        let params = BeinfParams::new(0.6, 0.4, 0.15, 0.25).unwrap();
        assert_relative_eq!(beinf_cdf(0.0, &params).unwrap(), 0.15, epsilon = 1e-15);
        assert_relative_eq!(beinf_cdf(1.0, &params).unwrap(), 1.0, epsilon = 1e-15);
        // just below 1 the upper mass is still excluded
        let near_one = beinf_cdf(1.0 - 1e-12, &params).unwrap();
        assert!(near_one <= 0.75 + 1e-9, "got {near_one}");
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(BeinfParams::new(0.5, 0.3, 0.6, 0.5).is_err());
        assert!(BeinfParams::new(0.5, 0.3, -0.1, 0.0).is_err());
        assert!(BeinfParams::new(0.5, 1.2, 0.0, 0.0).is_err());
    }
}
