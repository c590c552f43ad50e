//! Synthetic match generation from a specified model (states, covariates,
//! observations) for parameter-recovery studies, calibration experiments
//! and demo datasets. Stands in for the proprietary bookmaker feed: only
//! published marginal moments are matched.

use crate::beinf::{beinf_sample, BeinfParams};
use crate::data::{build_match_series, Dataset, RawMatch, RawMinuteRecord};
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig, FitResult};
use crate::likelihood::forward;
use crate::model::{build_grid, inv_logit, MatchSeries, Model, ModelParams, StateGrid};
use crate::splines::SplineBasis;
use crate::MATCH_MINUTES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Covariate generator settings. Defaults reproduce the marginal moments of
/// the real stakes data (prewindiff mean 0.139 / sd 0.317, vaepdiff mean
/// 0.004 / sd 0.161, about 2.8 goals per match).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateConfig {
    pub prewindiff_mean: f64,
    pub prewindiff_sd: f64,
    pub vaepdiff_mean: f64,
    pub vaepdiff_sd: f64,
    pub goals_per_match: f64,
    /// Probability that a minute has no stakes at all (missing y).
    pub missing_rate: f64,
}

impl Default for CovariateConfig {
    fn default() -> Self {
        Self {
            prewindiff_mean: 0.139,
            prewindiff_sd: 0.317,
            vaepdiff_mean: 0.004,
            vaepdiff_sd: 0.161,
            goals_per_match: 2.8,
            missing_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_matches: usize,
    pub t_len: usize,
    pub params: ModelParams,
    pub covariates: CovariateConfig,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n_matches: usize, params: ModelParams, seed: u64) -> Self {
        Self {
            n_matches,
            t_len: MATCH_MINUTES,
            params,
            covariates: CovariateConfig::default(),
            seed,
        }
    }
}

/// Generative parameter set used as the default simulation truth; the
/// magnitudes match a fitted baseline model on real stakes data.
pub fn default_true_params() -> ModelParams {
    ModelParams::baseline(0.968, 0.249, 0.300, 0.05, 0.04, -0.195, 2.395, 0.600)
}

// Full playing time simulated for goals/odds; the modelled series is
// truncated to t_len by the data pipeline.
const FULL_TIME: usize = 90;

// Decimal odds for a three-way market hitting the given home probability
// after proportional overround removal. The margin shrinks for extreme
// favourites so every quoted odd stays above 1.
fn odds_from_home_prob(w: f64) -> (f64, f64, f64) {
    let w = w.clamp(0.01, 0.97);
    let d_raw = 0.02 + 0.25 * (1.0 - (2.0 * w - 1.0).abs());
    let d = d_raw.min(0.6 * w).min(0.6 * (1.0 - w));
    let a = 1.0 - w - d;
    let max_p = w.max(a).max(d);
    let scale = (1.07f64).min(0.995 / max_p);
    (1.0 / (w * scale), 1.0 / (a * scale), 1.0 / (d * scale))
}

fn pregame_odds(prewindiff: f64) -> (f64, f64, f64) {
    let d = 0.2 * (1.0 - prewindiff.abs()) + 0.05;
    let w = (1.0 - d + prewindiff) / 2.0;
    let a = (1.0 - d - prewindiff) / 2.0;
    let max_p = w.max(a).max(d);
    let scale = (1.07f64).min(0.995 / max_p);
    (1.0 / (w * scale), 1.0 / (a * scale), 1.0 / (d * scale))
}

// Deterministic in-game home win probability curve in (scorediff,
// prewindiff, minutes remaining).
fn winprob_curve(prewindiff: f64, scorediff: i32, minute: usize) -> f64 {
    let rem = (FULL_TIME.saturating_sub(minute)) as f64 / FULL_TIME as f64;
    let eta = -0.15
        + 2.2 * prewindiff * (0.3 + 0.7 * rem)
        + scorediff as f64 * (0.8 + 1.4 * (1.0 - rem));
    inv_logit(eta).clamp(0.02, 0.96)
}

/// Simulate one match: latent states, covariates and observations, emitted
/// as raw minute records (minute 0 carries pre-game odds) plus the hidden
/// state path. Deterministic given (seed, match_index).
pub fn simulate_match(config: &SimConfig, match_index: usize) -> Result<SimulatedMatch> {
    if config.t_len < 1 || config.t_len > MATCH_MINUTES {
        return Err(Error::InvalidConfig(format!(
            "t_len must lie in 1..={MATCH_MINUTES}, got {}",
            config.t_len
        )));
    }
    config.params.validate()?;
    let basis = basis_for(&config.params)?;
    let model = Model::new(config.params.clone(), basis)?;
    let cov = &config.covariates;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(match_index as u64 + 1);

    let prewindiff = {
        let raw = Normal::new(cov.prewindiff_mean, cov.prewindiff_sd)
            .map_err(|e| Error::InvalidConfig(format!("prewindiff generator: {e}")))?
            .sample(&mut rng);
        raw.clamp(-0.92, 0.92)
    };

    // goal process over the full playing time
    let p_goal = (cov.goals_per_match / FULL_TIME as f64).clamp(0.0, 1.0);
    let p_home_goal = inv_logit(0.25 + prewindiff);
    let mut scorediff = vec![0i32; FULL_TIME + 1];
    for minute in 1..=FULL_TIME {
        scorediff[minute] = scorediff[minute - 1];
        if rng.gen::<f64>() < p_goal {
            if rng.gen::<f64>() < p_home_goal {
                scorediff[minute] += 1;
            } else {
                scorediff[minute] -= 1;
            }
        }
    }

    let vaep_noise = Normal::new(cov.vaepdiff_mean, cov.vaepdiff_sd)
        .map_err(|e| Error::InvalidConfig(format!("vaepdiff generator: {e}")))?;
    let vaepdiff: Vec<f64> = (0..FULL_TIME).map(|_| vaep_noise.sample(&mut rng)).collect();

    let winprob: Vec<f64> = (1..=FULL_TIME)
        .map(|minute| winprob_curve(prewindiff, scorediff[minute], minute))
        .collect();

    // latent states and observations on the modelled horizon
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let params = &model.params;
    let mut g = vec![0.0; config.t_len];
    for t in 1..=config.t_len {
        g[t - 1] = if t == 1 {
            params.stationary_sd() * std_normal.sample(&mut rng)
        } else {
            params.phi * g[t - 2]
                + model.beta_at(t) * vaepdiff[t - 2]
                + params.omega * std_normal.sample(&mut rng)
        };
    }
    let mut y: Vec<Option<f64>> = Vec::with_capacity(config.t_len);
    for t in 1..=config.t_len {
        if cov.missing_rate > 0.0 && rng.gen::<f64>() < cov.missing_rate {
            y.push(None);
            continue;
        }
        let mut eta = params.alpha0 + model.alpha_at(t) * prewindiff + g[t - 1];
        if params.is_varying() {
            eta += params.zeta1 * scorediff[t] as f64 + params.zeta2 * winprob[t - 1];
        }
        let obs_params = BeinfParams {
            mu: inv_logit(eta),
            sigma: params.sigma,
            p: params.p,
            q: params.q,
        };
        y.push(Some(beinf_sample(&obs_params, &mut rng)));
    }

    // assemble raw records; minute 0 carries the pre-game market
    let match_id = format!("sim-{match_index:04}");
    let (oh, oa, od) = pregame_odds(prewindiff);
    let mut records = vec![RawMinuteRecord {
        match_id: match_id.clone(),
        minute: 0,
        stake_home: 0.0,
        stake_away: 0.0,
        odds_home: Some(oh),
        odds_away: Some(oa),
        odds_draw: Some(od),
        vaepdiff: 0.0,
        scorediff: 0,
        winprob_home: None,
        true_state: None,
    }];
    let emit_until = if config.t_len == MATCH_MINUTES {
        FULL_TIME
    } else {
        config.t_len
    };
    for minute in 1..=emit_until {
        let (stake_home, stake_away) = if minute <= config.t_len {
            match y[minute - 1] {
                Some(v) => (1000.0 * v, 1000.0 * (1.0 - v)),
                None => (0.0, 0.0),
            }
        } else {
            (0.0, 0.0)
        };
        let w = winprob[minute - 1];
        let (oh, oa, od) = odds_from_home_prob(w);
        records.push(RawMinuteRecord {
            match_id: match_id.clone(),
            minute: minute as u32,
            stake_home,
            stake_away,
            odds_home: Some(oh),
            odds_away: Some(oa),
            odds_draw: Some(od),
            vaepdiff: vaepdiff[minute - 1],
            scorediff: scorediff[minute],
            winprob_home: Some(w),
            true_state: if minute <= config.t_len {
                Some(g[minute - 1])
            } else {
                None
            },
        });
    }

    let raw = RawMatch {
        match_id,
        records,
        prewindiff_hint: None,
    };
    let series = build_match_series(&raw)?;
    Ok(SimulatedMatch { raw, series })
}

#[derive(Debug, Clone)]
pub struct SimulatedMatch {
    pub raw: RawMatch,
    pub series: MatchSeries,
}

fn basis_for(params: &ModelParams) -> Result<Option<SplineBasis>> {
    if params.is_varying() {
        let k = params.alpha.coefficient_count().max(params.beta.coefficient_count());
        Ok(Some(SplineBasis::new(k)?))
    } else {
        Ok(None)
    }
}

/// Simulate a full dataset; the hidden state paths travel with the data in
/// the optional `true_state` column.
pub fn simulate_dataset(config: &SimConfig) -> Result<Dataset> {
    if config.n_matches == 0 {
        return Err(Error::InvalidConfig("n_matches must be at least 1".into()));
    }
    let mut raw = Vec::with_capacity(config.n_matches);
    let mut series = Vec::with_capacity(config.n_matches);
    for idx in 0..config.n_matches {
        let sim = simulate_match(config, idx)?;
        raw.push(sim.raw);
        series.push(sim.series);
    }
    Ok(Dataset { raw, series })
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamRecovery {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub empirical_se: f64,
    pub ci_coverage: f64,
    pub n_covered: usize,
    pub n_with_ci: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StateTracking {
    /// Mean filtered posterior mass assigned to the interval containing the
    /// true state (uniform baseline is 1/m).
    pub mean_mass_at_truth: f64,
    pub uniform_baseline: f64,
    /// Correlation between filtered posterior mean and true state path.
    pub state_correlation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub n_replications: usize,
    pub n_failed: usize,
    pub params: Vec<ParamRecovery>,
    pub state_tracking: Option<StateTracking>,
    pub fits: Vec<FitSummaryLite>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummaryLite {
    pub replication: usize,
    pub converged: bool,
    pub loglik: f64,
    pub error: Option<String>,
}

/// Filtered-state diagnostics against the stored truth paths.
pub fn state_tracking(
    matches: &[MatchSeries],
    model: &Model,
    grid: &StateGrid,
) -> Result<StateTracking> {
    let mut mass_sum = 0.0;
    let mut mass_n = 0usize;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for m in matches {
        let Some(truth) = &m.true_state else { continue };
        let fwd = forward(m, model, grid)?;
        for t in 0..m.len() {
            let g_true = truth[t];
            let idx = (((g_true - grid.lower) / grid.h).floor() as isize)
                .clamp(0, grid.m as isize - 1) as usize;
            mass_sum += fwd.filtered[(t, idx)];
            mass_n += 1;
            let post_mean: f64 = fwd
                .filtered
                .row(t)
                .iter()
                .zip(&grid.midpoints)
                .map(|(w, c)| w * c)
                .sum();
            xs.push(post_mean);
            ys.push(g_true);
        }
    }
    if mass_n == 0 {
        return Err(Error::Data(
            "no true state paths available for tracking diagnostics".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    Ok(StateTracking {
        mean_mass_at_truth: mass_sum / mass_n as f64,
        uniform_baseline: 1.0 / grid.m as f64,
        state_correlation: sxy / (sxx * syy).sqrt(),
    })
}

/// Repeatedly simulate and refit, reporting bias, empirical standard error
/// and confidence-interval coverage per parameter. Individual fit failures
/// are recorded, not fatal.
pub fn recovery_study(
    config: &SimConfig,
    fit_config: &FitConfig,
    n_replications: usize,
) -> Result<RecoveryReport> {
    if n_replications == 0 {
        return Err(Error::InvalidConfig(
            "recovery study needs at least one replication".into(),
        ));
    }
    let truth_vec = crate::estimation::transform_to_unconstrained(&config.params)?;
    let names = fit_config.variant.param_names();
    let natural_truth: Vec<f64> = natural_param_values(&config.params);
    if natural_truth.len() != names.len() {
        return Err(Error::InvalidConfig(
            "simulation truth does not match the fit variant".into(),
        ));
    }
    let _ = truth_vec;

    let mut estimates: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut covered = vec![0usize; names.len()];
    let mut with_ci = vec![0usize; names.len()];
    let mut n_failed = 0usize;
    let mut fits = Vec::with_capacity(n_replications);
    let mut last_ok: Option<(FitResult, Dataset)> = None;

    for rep in 0..n_replications {
        let mut rep_config = config.clone();
        rep_config.seed = config.seed.wrapping_add(rep as u64 * 0x9E37_79B9);
        let dataset = simulate_dataset(&rep_config)?;
        match fit(&dataset.series, fit_config) {
            Ok(res) => {
                for (i, summary) in res.ci_95.iter().enumerate() {
                    estimates[i].push(summary.estimate);
                    if let (Some(lo), Some(hi)) = (summary.ci_lower, summary.ci_upper) {
                        with_ci[i] += 1;
                        if natural_truth[i] >= lo && natural_truth[i] <= hi {
                            covered[i] += 1;
                        }
                    }
                }
                fits.push(FitSummaryLite {
                    replication: rep,
                    converged: res.convergence.converged,
                    loglik: res.loglik,
                    error: None,
                });
                last_ok = Some((res, dataset));
            }
            Err(e) => {
                n_failed += 1;
                fits.push(FitSummaryLite {
                    replication: rep,
                    converged: false,
                    loglik: f64::NAN,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let params = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let est = &estimates[i];
            let n = est.len();
            let mean = est.iter().sum::<f64>() / n.max(1) as f64;
            let se = if n > 1 {
                (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                f64::NAN
            };
            ParamRecovery {
                name: name.clone(),
                truth: natural_truth[i],
                mean_estimate: mean,
                bias: mean - natural_truth[i],
                empirical_se: se,
                ci_coverage: if with_ci[i] > 0 {
                    covered[i] as f64 / with_ci[i] as f64
                } else {
                    f64::NAN
                },
                n_covered: covered[i],
                n_with_ci: with_ci[i],
            }
        })
        .collect();

    let state_tracking = match &last_ok {
        Some((res, dataset)) => {
            let model = res.model()?;
            let grid = build_grid(&model.params, res.grid.m, res.grid.span_sds)?;
            Some(state_tracking(&dataset.series, &model, &grid)?)
        }
        None => None,
    };

    Ok(RecoveryReport {
        n_replications,
        n_failed,
        params,
        state_tracking,
        fits,
    })
}

fn natural_param_values(params: &ModelParams) -> Vec<f64> {
    let mut v = vec![
        params.phi,
        params.omega,
        params.sigma,
        params.p,
        params.q,
        params.alpha0,
    ];
    match (&params.alpha, &params.beta) {
        (crate::model::Effect::Constant(a), crate::model::Effect::Constant(b)) => {
            v.push(*a);
            v.push(*b);
        }
        (crate::model::Effect::Varying(a), crate::model::Effect::Varying(b)) => {
            v.extend_from_slice(a);
            v.extend_from_slice(b);
            v.push(params.zeta1);
            v.push(params.zeta2);
        }
        _ => {}
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn same_seed_gives_identical_matches() {
        let config = SimConfig::new(3, default_true_params(), 7);
        let a = simulate_match(&config, 1).unwrap();
        let b = simulate_match(&config, 1).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.raw.records, b.raw.records);
        let c = simulate_match(&config, 2).unwrap();
        assert_ne!(a.series.y, c.series.y);
    }

    #[test]
    fn degenerate_noise_pins_state_at_zero() {
        let params = ModelParams::baseline(0.5, 1e-8, 0.1, 0.0, 0.0, -0.2, 1.5, 0.0);
        let mut config = SimConfig::new(40, params, 3);
        config.t_len = 60;
        let mut sum = 0.0;
        let mut count = 0usize;
        for idx in 0..config.n_matches {
            let sim = simulate_match(&config, idx).unwrap();
            let truth = sim.series.true_state.as_ref().unwrap();
            assert!(truth.iter().all(|g| g.abs() < 1e-6));
            for (y, _) in sim.series.y.iter().flatten().zip(truth.iter()) {
                // E[y] = mu = logit^-1(alpha0 + alpha * prewindiff)
                let expected = inv_logit(-0.2 + 1.5 * sim.series.prewindiff);
                sum += y - expected;
                count += 1;
            }
        }
        let mean_error = sum / count as f64;
        // observation sd is 0.1, so the mean error over ~2400 draws is tiny
        assert!(mean_error.abs() < 0.01, "mean error {mean_error}");
    }

    #[test]
    fn vaepdiff_moments_match_calibration() {
        let config = SimConfig::new(60, default_true_params(), 11);
        let dataset = simulate_dataset(&config).unwrap();
        let values: Vec<f64> = dataset
            .series
            .iter()
            .flat_map(|m| m.vaepdiff.iter().copied())
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        // MC standard error of the mean is 0.161/sqrt(n) ~ 0.0023
        assert!((mean - 0.004).abs() < 0.008, "mean {mean}");
        assert!((sd - 0.161).abs() < 0.005, "sd {sd}");
    }

    #[test]
    fn simulated_matches_are_ingestible_and_consistent() {
        let mut config = SimConfig::new(2, default_true_params(), 5);
        config.covariates.missing_rate = 0.05;
        let dataset = simulate_dataset(&config).unwrap();
        for series in &dataset.series {
            assert_eq!(series.len(), MATCH_MINUTES);
            assert!(series.true_state.is_some());
            assert!(series.final_scorediff.is_some());
            series.validate().unwrap();
            // prewindiff survives the odds round trip
            assert!(series.prewindiff.abs() <= 0.92 + 1e-9);
        }
        // raw files include post-85 rows for the final result
        assert_eq!(dataset.raw[0].records.len(), FULL_TIME + 1);
    }

    #[test]
    fn recovery_study_rejects_zero_replications() {
        let config = SimConfig::new(1, default_true_params(), 1);
        let fit_config = FitConfig::baseline(crate::estimation::GridConfig::default());
        assert!(recovery_study(&config, &fit_config, 0).is_err());
    }

    #[test]
    fn winprob_curve_is_sane() {
        // leading at the death is near-certain, trailing near-hopeless
        assert!(winprob_curve(0.0, 2, 88) > 0.9);
        assert!(winprob_curve(0.0, -2, 88) < 0.1);
        let early = winprob_curve(0.4, 0, 5);
        let late = winprob_curve(0.4, 0, 80);
        assert!(early > late, "pre-game strength decays: {early} vs {late}");
        for sd in -3..=3 {
            for minute in [1, 45, 90] {
                let w = winprob_curve(-0.5, sd, minute);
                assert!((0.0..=1.0).contains(&w));
            }
        }
    }

    #[test]
    fn odds_inversion_round_trips() {
        for w in [0.05, 0.3, 0.5, 0.8, 0.95] {
            let (oh, oa, od) = odds_from_home_prob(w);
            assert!(oh > 1.0 && oa > 1.0 && od > 1.0);
            let (ph, _, _) = crate::data::implied_probability(oh, oa, od).unwrap();
            assert_relative_eq!(ph, w.clamp(0.01, 0.97), epsilon = 1e-12);
        }
        for pw in [-0.9, -0.2, 0.0, 0.139, 0.85] {
            let (oh, oa, od) = pregame_odds(pw);
            assert!(oh > 1.0 && oa > 1.0 && od > 1.0);
            let (ph, pa, _) = crate::data::implied_probability(oh, oa, od).unwrap();
            assert_relative_eq!(ph - pa, pw, epsilon = 1e-12);
        }
    }
}
