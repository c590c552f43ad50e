//! Filtering-based one-step-ahead prediction of relative stakes,
//! predictive sampling and forecast-quantile outlier flags.
//!
//! The one-step-ahead law of y_{t+1} is a finite mixture over grid cells of
//! BEINF distributions, weighted by the predicted state distribution
//! (filtered row times one transition step, no observation update).

use crate::beinf::{beinf_sample, BeinfParams};
use crate::error::{Error, Result};
use crate::likelihood::{forward_robust, TransitionKernel};
use crate::model::{inv_logit, MatchSeries, Model, StateGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::beta_reg;

/// Predictive distribution of y at minute `t_target`, conditional on the
/// observations through minute `t_target - 1`.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub t_target: usize,
    /// Predicted state-interval probabilities (sums to one).
    pub state_predictive: Vec<f64>,
    /// BEINF mean parameter per grid cell at the target minute.
    pub mu_cells: Vec<f64>,
    pub sigma: f64,
    pub p: f64,
    pub q: f64,
    /// Mean of the predictive mixture.
    pub mean: f64,
    /// Requested (probability, value) pairs.
    pub quantiles: Vec<(f64, f64)>,
}

impl Forecast {
    /// CDF of the predictive mixture, with the masses at 0 and 1 exact.
    pub fn cdf(&self, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("cdf argument {y} outside [0,1]")));
        }
        if y >= 1.0 {
            return Ok(1.0);
        }
        let mut acc = self.p;
        if y > 0.0 {
            let cont = 1.0 - self.p - self.q;
            let shape_sum = (1.0 - self.sigma * self.sigma) / (self.sigma * self.sigma);
            let mut beta_part = 0.0;
            for (w, mu) in self.state_predictive.iter().zip(&self.mu_cells) {
                if *w == 0.0 {
                    continue;
                }
                let a = mu * shape_sum;
                let b = (1.0 - mu) * shape_sum;
                beta_part += w * beta_reg(a, b, y);
            }
            acc += cont * beta_part;
        }
        Ok(acc)
    }

    /// Quantile of the predictive mixture by bisection on the continuous
    /// part; the point masses at 0 and 1 are handled exactly. A request of
    /// exactly 1 returns the supremum of the support, so nothing can exceed
    /// it.
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        if !(0.0 < prob && prob <= 1.0) {
            return Err(Error::Domain(format!(
                "quantile probability {prob} outside (0,1]"
            )));
        }
        if prob <= self.p {
            return Ok(0.0);
        }
        if prob >= 1.0 - self.q {
            return Ok(1.0);
        }
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..200 {
            if hi - lo <= 1e-13 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid)? < prob {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn predictive_at(
    series: &MatchSeries,
    model: &Model,
    grid: &StateGrid,
    kernel: &TransitionKernel,
    filtered_row: &[f64],
    t: usize,
    quantiles: &[f64],
) -> Result<Forecast> {
    let t_target = t + 1;
    let m = grid.m;
    let mut scratch = vec![0.0; m];
    let mut predictive = vec![0.0; m];
    let shift = model.beta_at(t_target) * series.vaepdiff[t - 1];
    kernel.apply(filtered_row, shift, &mut scratch, &mut predictive);
    let total: f64 = predictive.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numerical(format!(
            "state predictive at minute {t_target} has no mass"
        )));
    }
    for v in predictive.iter_mut() {
        *v /= total;
    }

    let params = &model.params;
    let offset = model.predictor_offset(series, t_target);
    let mu_cells: Vec<f64> = grid.midpoints.iter().map(|&c| inv_logit(offset + c)).collect();
    let cont = 1.0 - params.p - params.q;
    let mean = predictive
        .iter()
        .zip(&mu_cells)
        .map(|(w, mu)| w * (cont * mu + params.q))
        .sum();

    let mut forecast = Forecast {
        t_target,
        state_predictive: predictive,
        mu_cells,
        sigma: params.sigma,
        p: params.p,
        q: params.q,
        mean,
        quantiles: Vec::with_capacity(quantiles.len()),
    };
    for &prob in quantiles {
        let value = forecast.quantile(prob)?;
        forecast.quantiles.push((prob, value));
    }
    Ok(forecast)
}

/// One-step-ahead forecast of y_{t+1} given observations through minute `t`.
pub fn one_step_ahead(
    series: &MatchSeries,
    model: &Model,
    grid: &StateGrid,
    t: usize,
    quantiles: &[f64],
) -> Result<Forecast> {
    if t < 1 || t >= series.len() {
        return Err(Error::Domain(format!(
            "forecast origin {t} outside 1..{}",
            series.len()
        )));
    }
    let kernel = TransitionKernel::new(model, grid);
    let filter = forward_robust(series, model, grid, &kernel)?;
    let row = filter.filtered.row(t - 1).to_vec();
    predictive_at(series, model, grid, &kernel, &row, t, quantiles)
}

/// One-step-ahead forecasts for every target minute 2..=T in a single
/// filter sweep.
pub fn forecast_series(
    series: &MatchSeries,
    model: &Model,
    grid: &StateGrid,
    quantiles: &[f64],
) -> Result<Vec<Forecast>> {
    if series.len() < 2 {
        return Err(Error::Domain(
            "forecasting needs at least two minutes of data".into(),
        ));
    }
    let kernel = TransitionKernel::new(model, grid);
    let filter = forward_robust(series, model, grid, &kernel)?;
    (1..series.len())
        .map(|t| {
            let row = filter.filtered.row(t - 1).to_vec();
            predictive_at(series, model, grid, &kernel, &row, t, quantiles)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierDirection {
    /// Flag observations above the requested predictive quantile (the
    /// fraud-motivated default).
    Upper,
    /// Flag outside the central interval of the requested coverage.
    TwoSided,
}

/// Minutes whose observed relative stakes fall outside the one-step-ahead
/// predictive quantile. Returned values are target minutes (t+1).
pub fn flag_outliers(
    series: &MatchSeries,
    model: &Model,
    grid: &StateGrid,
    quantile: f64,
    direction: OutlierDirection,
) -> Result<Vec<usize>> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Domain(format!(
            "outlier quantile must lie in (0,1], got {quantile}"
        )));
    }
    let probs = match direction {
        OutlierDirection::Upper => vec![quantile],
        OutlierDirection::TwoSided => {
            let tail = (1.0 - quantile) / 2.0;
            vec![tail, 1.0 - tail]
        }
    };
    let forecasts = forecast_series(series, model, grid, &probs)?;
    let mut flagged = Vec::new();
    for fc in &forecasts {
        let Some(y) = series.y[fc.t_target - 1] else {
            continue;
        };
        let out = match direction {
            OutlierDirection::Upper => y > fc.quantiles[0].1,
            OutlierDirection::TwoSided => y < fc.quantiles[0].1 || y > fc.quantiles[1].1,
        };
        if out {
            flagged.push(fc.t_target);
        }
    }
    Ok(flagged)
}

/// i.i.d. draws from the predictive mixture: sample a grid cell, then a
/// BEINF variate at that cell's mean. Deterministic given the seed.
pub fn predictive_sample(forecast: &Forecast, n_draws: usize, seed: u64) -> Result<Vec<f64>> {
    if n_draws == 0 {
        return Err(Error::InvalidConfig("n_draws must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let u: f64 = rand::Rng::gen(&mut rng);
        let mut acc = 0.0;
        let mut cell = forecast.state_predictive.len() - 1;
        for (i, w) in forecast.state_predictive.iter().enumerate() {
            acc += w;
            if u < acc {
                cell = i;
                break;
            }
        }
        let params = BeinfParams {
            mu: forecast.mu_cells[cell],
            sigma: forecast.sigma,
            p: forecast.p,
            q: forecast.q,
        };
        draws.push(beinf_sample(&params, &mut rng));
    }
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid, ModelParams};
    use approx::assert_relative_eq;

    fn series(y: Vec<Option<f64>>, vaep: Vec<f64>) -> MatchSeries {
        let t = y.len();
        MatchSeries::new("f", y, 0.2, vaep, vec![0; t], vec![0.5; t]).unwrap()
    }

    #[test]
    fn symmetric_model_predicts_half() {
        let params = ModelParams::baseline(0.0, 0.5, (1.0f64 / 3.0).sqrt(), 0.0, 0.0, 0.0, 0.0, 0.0);
        let model = Model::baseline(params).unwrap();
        let grid = build_grid(&model.params, 60, 5.0).unwrap();
        let s = series(vec![Some(0.9), Some(0.8), Some(0.1)], vec![0.3, -0.2, 0.4]);
        let fc = one_step_ahead(&s, &model, &grid, 2, &[]).unwrap();
        assert_relative_eq!(fc.mean, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn state_predictive_is_probability_vector() {
        let params = ModelParams::baseline(0.9, 0.3, 0.3, 0.05, 0.02, -0.2, 2.0, 0.5);
        let model = Model::baseline(params).unwrap();
        let grid = build_grid(&model.params, 80, 5.0).unwrap();
        let s = series(
            vec![Some(0.4), Some(0.6), None, Some(0.3)],
            vec![0.1, -0.1, 0.2, 0.0],
        );
        let fc = one_step_ahead(&s, &model, &grid, 3, &[0.5]).unwrap();
        let sum: f64 = fc.state_predictive.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        // mixture mean matches the weighted BEINF means
        let cont = 1.0 - fc.p - fc.q;
        let expected: f64 = fc
            .state_predictive
            .iter()
            .zip(&fc.mu_cells)
            .map(|(w, mu)| w * (cont * mu + fc.q))
            .sum();
        assert_relative_eq!(fc.mean, expected, epsilon = 1e-14);
    }

    #[test]
    fn cdf_normalizes_and_quantile_round_trips() {
        let params = ModelParams::baseline(0.8, 0.4, 0.3, 0.0, 0.0, 0.1, 1.5, 0.4);
        let model = Model::baseline(params).unwrap();
        let grid = build_grid(&model.params, 50, 5.0).unwrap();
        let s = series(vec![Some(0.3), Some(0.7)], vec![0.2, 0.1]);
        let fc = one_step_ahead(&s, &model, &grid, 1, &[]).unwrap();
        assert_relative_eq!(fc.cdf(1.0).unwrap(), 1.0, epsilon = 1e-12);
        for prob in [0.05, 0.4, 0.9, 0.99] {
            let q = fc.quantile(prob).unwrap();
            assert_relative_eq!(fc.cdf(q).unwrap(), prob, epsilon = 1e-8);
        }
    }

    #[test]
    fn quantile_handles_masses_exactly() {
        let params = ModelParams::baseline(0.5, 0.3, 0.3, 0.2, 0.15, 0.0, 0.0, 0.0);
        let model = Model::baseline(params).unwrap();
        let grid = build_grid(&model.params, 30, 5.0).unwrap();
        let s = series(vec![Some(0.5), Some(0.5)], vec![0.0, 0.0]);
        let fc = one_step_ahead(&s, &model, &grid, 1, &[]).unwrap();
        assert_eq!(fc.quantile(0.1).unwrap(), 0.0); // below the mass at zero
        assert_eq!(fc.quantile(0.99).unwrap(), 1.0); // inside the mass at one
    }

    #[test]
    fn outlier_flags_certain_one_when_q_is_zero() {
        let params = ModelParams::baseline(0.5, 0.3, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0);
        let model = Model::baseline(params).unwrap();
        let grid = build_grid(&model.params, 40, 5.0).unwrap();
        let s = series(vec![Some(0.5), Some(1.0)], vec![0.0, 0.0]);
        let flags = flag_outliers(&s, &model, &grid, 0.99, OutlierDirection::Upper).unwrap();
        assert_eq!(flags, vec![2]);
        // a request of exactly 1 can never be exceeded
        let none = flag_outliers(&s, &model, &grid, 1.0, OutlierDirection::Upper).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn degenerate_predictive_samples_plain_beinf() {
        let fc = Forecast {
            t_target: 2,
            state_predictive: vec![0.0, 1.0, 0.0],
            mu_cells: vec![0.2, 0.6, 0.8],
            sigma: 0.3,
            p: 0.0,
            q: 0.0,
            mean: 0.6,
            quantiles: vec![],
        };
        let draws = predictive_sample(&fc, 4000, 11).unwrap();
        let mean: f64 = draws.iter().sum::<f64>() / draws.len() as f64;
        // plain BEINF at mu = 0.6: sd = 0.3, MC se ~ 0.3/sqrt(4000)
        assert!((mean - 0.6).abs() < 0.02, "mean {mean}");
        assert_eq!(
            predictive_sample(&fc, 16, 5).unwrap(),
            predictive_sample(&fc, 16, 5).unwrap()
        );
        assert!(predictive_sample(&fc, 0, 1).is_err());
    }

    #[test]
    fn sample_mean_matches_forecast_mean() {
        let params = ModelParams::baseline(0.8, 0.4, 0.3, 0.05, 0.1, -0.1, 1.0, 0.4);
        let model = Model::baseline(params).unwrap();
        let grid = build_grid(&model.params, 40, 5.0).unwrap();
        let s = series(vec![Some(0.3), Some(0.7), Some(0.6)], vec![0.2, 0.1, 0.0]);
        let fc = one_step_ahead(&s, &model, &grid, 2, &[]).unwrap();
        let n = 100_000;
        let draws = predictive_sample(&fc, n, 123).unwrap();
        let mean: f64 = draws.iter().sum::<f64>() / n as f64;
        // 3 Monte Carlo standard errors, sd bounded by 0.5
        let tol = 3.0 * 0.5 / (n as f64).sqrt();
        assert!((mean - fc.mean).abs() < tol, "{mean} vs {}", fc.mean);
    }

    #[test]
    fn mean_increases_with_shifted_state_mass() {
        let fc_low = Forecast {
            t_target: 2,
            state_predictive: vec![0.7, 0.2, 0.1],
            mu_cells: vec![0.2, 0.5, 0.8],
            sigma: 0.3,
            p: 0.0,
            q: 0.0,
            mean: 0.0,
            quantiles: vec![],
        };
        let mean = |w: &[f64], mu: &[f64]| -> f64 {
            w.iter().zip(mu).map(|(w, m)| w * m).sum()
        };
        let low = mean(&fc_low.state_predictive, &fc_low.mu_cells);
        let high = mean(&[0.1, 0.2, 0.7], &fc_low.mu_cells);
        assert!(high > low);
    }

    #[test]
    fn origin_out_of_range_rejected() {
        let params = ModelParams::baseline(0.5, 0.3, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0);
        let model = Model::baseline(params).unwrap();
        let grid = build_grid(&model.params, 10, 5.0).unwrap();
        let s = series(vec![Some(0.5), Some(0.5)], vec![0.0, 0.0]);
        assert!(one_step_ahead(&s, &model, &grid, 0, &[]).is_err());
        assert!(one_step_ahead(&s, &model, &grid, 2, &[]).is_err());
    }
}
