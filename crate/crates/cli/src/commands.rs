//! Command implementations: thin orchestration over the library with
//! provenance-stamped CSV/JSON outputs.

use crate::config::RunConfig;
use crate::output::{csv_writer, num, opt_num, write_json, Provenance};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use stakeflow::data::{self, Dataset};
use stakeflow::estimation::{
    self, FitConfig, FitResult, GridConfig, ModelVariant, TuneResult,
};
use stakeflow::forecast::{forecast_series, predictive_sample};
use stakeflow::model::build_grid;
use stakeflow::simulate::{self, SimConfig};
use stakeflow::strategy::{backtest, StrategyConfig};
use std::io::Write;
use std::path::Path;

fn load_dataset(input: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(input)
        .with_context(|| format!("cannot open input {}", input.display()))?;
    let raw = data::read_raw_csv(std::io::BufReader::new(file))?;
    Ok(Dataset::from_raw(raw)?)
}

fn grid_config(config: &RunConfig) -> GridConfig {
    GridConfig {
        m: config.m,
        span_sds: config.span_sds,
    }
}

fn variant(config: &RunConfig) -> Result<ModelVariant> {
    match config.variant.as_str() {
        "baseline" => Ok(ModelVariant::Baseline),
        "varying" => Ok(ModelVariant::Varying { k: config.k }),
        other => bail!("unknown variant '{other}' (use baseline or varying)"),
    }
}

fn sim_config(config: &RunConfig) -> Result<SimConfig> {
    let params = config.sim_params.to_model_params()?;
    Ok(SimConfig {
        n_matches: config.n_matches,
        t_len: config.t_len,
        params,
        covariates: stakeflow::simulate::CovariateConfig {
            prewindiff_mean: config.prewindiff_mean,
            prewindiff_sd: config.prewindiff_sd,
            vaepdiff_mean: config.vaepdiff_mean,
            vaepdiff_sd: config.vaepdiff_sd,
            goals_per_match: config.goals_per_match,
            missing_rate: config.missing_rate,
        },
        seed: config.seed,
    })
}

fn single_lambda(values: &[f64], name: &str) -> Result<f64> {
    match values {
        [v] => Ok(*v),
        _ => bail!("{name} must be a single value for this command (got {values:?})"),
    }
}

pub fn ingest(config: &RunConfig, input: &Path, outdir: &Path) -> Result<()> {
    let prov = Provenance::new(config.config_hash(), config.seed);
    let dataset = load_dataset(input)?;

    let mut processed = csv_writer(outdir, "processed.csv", &prov)?;
    data::write_processed_csv(&mut processed, &dataset)?;
    processed.flush()?;

    let mut descr = csv_writer(outdir, "descriptives.csv", &prov)?;
    writeln!(descr, "variable,n,mean,sd,min,max")?;
    for row in data::descriptives(&dataset.series) {
        writeln!(
            descr,
            "{},{},{},{},{},{}",
            row.name,
            row.n,
            num(row.mean),
            num(row.sd),
            num(row.min),
            num(row.max)
        )?;
    }
    descr.flush()?;

    let ccf = data::cross_correlation(&dataset.series, config.max_lag)?;
    let mut ccf_out = csv_writer(outdir, "cross_correlations.csv", &prov)?;
    if !ccf.skipped.is_empty() {
        writeln!(
            ccf_out,
            "# skipped (pre-goal segment shorter than max_lag+2): {}",
            ccf.skipped.join(" ")
        )?;
    }
    writeln!(ccf_out, "match_id,lag,value")?;
    for per_match in &ccf.per_match {
        for (lag, value) in per_match.lags.iter().enumerate() {
            writeln!(ccf_out, "{},{},{}", per_match.match_id, lag, num(*value))?;
        }
    }
    for (lag, value) in ccf.mean.iter().enumerate() {
        writeln!(ccf_out, "mean,{},{}", lag, num(*value))?;
    }
    ccf_out.flush()?;

    let rows: usize = dataset.series.iter().map(|s| s.len()).sum();
    println!(
        "ingested {} matches, {} processed rows -> {}",
        dataset.series.len(),
        rows,
        outdir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FitDocument<'a> {
    config: &'a RunConfig,
    result: &'a FitResult,
}

#[derive(Deserialize)]
struct FitDocumentOwned {
    result: FitResult,
}

fn write_estimates(outdir: &Path, prov: &Provenance, result: &FitResult) -> Result<()> {
    let mut est = csv_writer(outdir, "estimates.csv", prov)?;
    writeln!(est, "parameter,estimate,ci_lower,ci_upper")?;
    for row in &result.ci_95 {
        writeln!(
            est,
            "{},{},{},{}",
            row.name,
            num(row.estimate),
            opt_num(row.ci_lower),
            opt_num(row.ci_upper)
        )?;
    }
    est.flush()?;
    Ok(())
}

pub fn fit_cmd(config: &RunConfig, input: &Path, outdir: &Path) -> Result<()> {
    let prov = Provenance::new(config.config_hash(), config.seed);
    let dataset = load_dataset(input)?;
    let variant = variant(config)?;
    let mut fit_config = FitConfig {
        variant,
        grid: grid_config(config),
        lambda_alpha: 0.0,
        lambda_beta: 0.0,
        max_iterations: 500,
        grad_tol: 1e-5,
        init: None,
    };
    if let ModelVariant::Varying { k } = variant {
        fit_config.lambda_alpha = single_lambda(&config.lambda_alpha, "--lambda-alpha")?;
        fit_config.lambda_beta = single_lambda(&config.lambda_beta, "--lambda-beta")?;
        fit_config.init = Some(estimation::varying_init_from_baseline(
            &dataset.series,
            fit_config.grid,
            k,
        )?);
    }
    let result = estimation::fit(&dataset.series, &fit_config)?;
    let echo = config.canonical();
    write_json(outdir, "fit.json", &prov, &FitDocument { config: &echo, result: &result })?;
    write_estimates(outdir, &prov, &result)?;
    println!(
        "fit: loglik {:.4}, AIC {:.4}, {} ({} iterations) -> {}",
        result.loglik,
        result.aic,
        if result.convergence.converged {
            "converged"
        } else {
            "did not converge"
        },
        result.convergence.iterations,
        outdir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TuneDocument<'a> {
    config: &'a RunConfig,
    #[serde(flatten)]
    result: &'a TuneResult,
}

pub fn tune_cmd(config: &RunConfig, input: &Path, outdir: &Path) -> Result<()> {
    let prov = Provenance::new(config.config_hash(), config.seed);
    let dataset = load_dataset(input)?;
    let result = estimation::tune(
        &dataset.series,
        grid_config(config),
        config.k,
        &config.lambda_alpha,
        &config.lambda_beta,
    )?;

    let mut table = csv_writer(outdir, "aic_table.csv", &prov)?;
    let header: Vec<String> = std::iter::once("lambda_alpha".to_string())
        .chain(result.lambda_beta_grid.iter().map(|l| format!("lb_{l}")))
        .collect();
    writeln!(table, "{}", header.join(","))?;
    let nb = result.lambda_beta_grid.len();
    for (i, la) in result.lambda_alpha_grid.iter().enumerate() {
        let cells: Vec<String> = (0..nb)
            .map(|j| num(result.cells[i * nb + j].aic))
            .collect();
        writeln!(table, "{},{}", la, cells.join(","))?;
    }
    table.flush()?;

    let echo = config.canonical();
    write_json(outdir, "tune.json", &prov, &TuneDocument { config: &echo, result: &result })?;
    // the selected model doubles as a fit document for `forecast`
    write_json(
        outdir,
        "fit.json",
        &prov,
        &FitDocument {
            config: &echo,
            result: &result.best,
        },
    )?;
    write_estimates(outdir, &prov, &result.best)?;
    println!(
        "tune: selected (lambda_alpha, lambda_beta) = ({}, {}), AIC {:.4} -> {}",
        result.best_lambda.0,
        result.best_lambda.1,
        result.best.aic,
        outdir.display()
    );
    Ok(())
}

pub fn forecast_cmd(
    config: &RunConfig,
    input: &Path,
    fit_json: &Path,
    outdir: &Path,
) -> Result<()> {
    let prov = Provenance::new(config.config_hash(), config.seed);
    let dataset = load_dataset(input)?;
    let doc: FitDocumentOwned = serde_json::from_str(
        &std::fs::read_to_string(fit_json)
            .with_context(|| format!("cannot read {}", fit_json.display()))?,
    )
    .with_context(|| format!("cannot parse fit result from {}", fit_json.display()))?;
    let model = doc.result.model()?;
    let grid = build_grid(&model.params, doc.result.grid.m, doc.result.grid.span_sds)?;

    // outlier quantiles are appended to the requested list
    let tail = (1.0 - config.quantile) / 2.0;
    let outlier_probs = if config.two_sided {
        vec![tail, 1.0 - tail]
    } else {
        vec![config.quantile]
    };
    let mut probs = config.quantiles.clone();
    probs.retain(|p| *p > 0.0 && *p < 1.0);

    let mut out = csv_writer(outdir, "forecast.csv", &prov)?;
    let q_cols: Vec<String> = probs.iter().map(|p| format!("q_{p}")).collect();
    writeln!(
        out,
        "match_id,minute,observed,predicted_mean,{},flag",
        q_cols.join(",")
    )?;
    let mut samples = if config.sample_draws > 0 {
        Some(csv_writer(outdir, "forecast_samples.csv", &prov)?)
    } else {
        None
    };
    if let Some(s) = samples.as_mut() {
        writeln!(s, "match_id,minute,draw,value")?;
    }

    let mut all_probs = probs.clone();
    all_probs.extend(&outlier_probs);
    let mut flagged_total = 0usize;
    for series in &dataset.series {
        let forecasts = forecast_series(series, &model, &grid, &all_probs)?;
        for fc in &forecasts {
            let observed = series.y[fc.t_target - 1];
            let flag = match observed {
                None => false,
                Some(y) => {
                    if config.two_sided {
                        let lo = fc.quantiles[probs.len()].1;
                        let hi = fc.quantiles[probs.len() + 1].1;
                        y < lo || y > hi
                    } else {
                        y > fc.quantiles[probs.len()].1
                    }
                }
            };
            flagged_total += flag as usize;
            let quantile_values: Vec<String> = fc.quantiles[..probs.len()]
                .iter()
                .map(|(_, v)| num(*v))
                .collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                series.match_id,
                fc.t_target,
                opt_num(observed),
                num(fc.mean),
                quantile_values.join(","),
                flag as u8
            )?;
            if let Some(s) = samples.as_mut() {
                let draw_seed = config
                    .seed
                    .wrapping_add(fc.t_target as u64)
                    .wrapping_mul(0x9E37_79B9)
                    .wrapping_add(fxhash(&series.match_id));
                for (i, v) in predictive_sample(fc, config.sample_draws, draw_seed)?
                    .into_iter()
                    .enumerate()
                {
                    writeln!(s, "{},{},{},{}", series.match_id, fc.t_target, i, num(v))?;
                }
            }
        }
    }
    out.flush()?;
    if let Some(mut s) = samples {
        s.flush()?;
    }
    println!(
        "forecast: {} matches, {} outliers flagged at quantile {} -> {}",
        dataset.series.len(),
        flagged_total,
        config.quantile,
        outdir.display()
    );
    Ok(())
}

// deterministic string hash for per-match sampling seeds
fn fxhash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

pub fn simulate_cmd(config: &RunConfig, outdir: &Path) -> Result<()> {
    let prov = Provenance::new(config.config_hash(), config.seed);
    let sim = sim_config(config)?;
    let dataset = simulate::simulate_dataset(&sim)?;
    let mut out = csv_writer(outdir, "simulated.csv", &prov)?;
    data::write_raw_csv(&mut out, &dataset.raw, true)?;
    out.flush()?;
    write_json(outdir, "simulation.json", &prov, &serde_json::json!({ "config": config.canonical() }))?;
    let rows: usize = dataset.raw.iter().map(|m| m.records.len()).sum();
    println!(
        "simulated {} matches ({rows} raw rows) -> {}",
        sim.n_matches,
        outdir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct BacktestDocument<'a> {
    config: &'a RunConfig,
    table: &'a stakeflow::strategy::BacktestTable,
}

pub fn backtest_cmd(config: &RunConfig, input: &Path, outdir: &Path) -> Result<()> {
    let prov = Provenance::new(config.config_hash(), config.seed);
    let dataset = load_dataset(input)?;
    let strategy = StrategyConfig {
        thresholds: config.thresholds.clone(),
        windows: config.parse_windows().map_err(|e| anyhow!("{e}"))?,
        stake: config.stake,
        first_crossing_only: config.first_crossing_only,
    };
    let table = backtest(&dataset.series, &strategy)?;

    let mut out = csv_writer(outdir, "returns.csv", &prov)?;
    let header: Vec<String> = std::iter::once("window".to_string())
        .chain(table.thresholds.iter().map(|t| format!("vaepdiff>{t}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (wi, window) in table.windows.iter().enumerate() {
        let cells: Vec<String> = table.cells[wi]
            .iter()
            .map(|c| opt_num(c.return_rate()))
            .collect();
        writeln!(out, "{},{}", window.label(), cells.join(","))?;
    }
    out.flush()?;
    let echo = config.canonical();
    write_json(outdir, "backtest.json", &prov, &BacktestDocument { config: &echo, table: &table })?;
    println!(
        "backtest: {} eligible matches -> {}",
        table.eligible_matches,
        outdir.display()
    );
    Ok(())
}

pub fn recovery_cmd(config: &RunConfig, outdir: &Path) -> Result<()> {
    let prov = Provenance::new(config.config_hash(), config.seed);
    let sim = sim_config(config)?;
    let requested = variant(config)?;
    let truth_is_varying = sim.params.is_varying();
    if truth_is_varying != matches!(requested, ModelVariant::Varying { .. }) {
        bail!("sim_params effect lengths do not match the requested variant");
    }
    let fit_config = FitConfig {
        variant: requested,
        grid: grid_config(config),
        lambda_alpha: if truth_is_varying {
            single_lambda(&config.lambda_alpha, "--lambda-alpha")?
        } else {
            0.0
        },
        lambda_beta: if truth_is_varying {
            single_lambda(&config.lambda_beta, "--lambda-beta")?
        } else {
            0.0
        },
        max_iterations: 500,
        grad_tol: 1e-5,
        init: None,
    };
    let report = simulate::recovery_study(&sim, &fit_config, config.replications)?;

    let mut out = csv_writer(outdir, "recovery.csv", &prov)?;
    writeln!(
        out,
        "parameter,truth,mean_estimate,bias,empirical_se,ci_coverage,n_with_ci"
    )?;
    for row in &report.params {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.name,
            num(row.truth),
            num(row.mean_estimate),
            num(row.bias),
            num(row.empirical_se),
            num(row.ci_coverage),
            row.n_with_ci
        )?;
    }
    out.flush()?;
    write_json(
        outdir,
        "recovery.json",
        &prov,
        &serde_json::json!({ "config": config.canonical(), "report": report }),
    )?;
    println!(
        "recovery study: {} replications ({} failed) -> {}",
        report.n_replications,
        report.n_failed,
        outdir.display()
    );
    Ok(())
}
