//! Run configuration: a TOML key-value file plus flag overrides (flags win).
//! The resolved configuration is hashed into every output's provenance
//! header, so tuning runs are recorded and diffable.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stakeflow::model::{Effect, ModelParams};
use stakeflow::strategy::MinuteWindow;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub phi: f64,
    pub omega: f64,
    pub sigma: f64,
    pub p: f64,
    pub q: f64,
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub zeta1: f64,
    pub zeta2: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        // fitted-scale defaults for demo datasets
        Self {
            phi: 0.968,
            omega: 0.249,
            sigma: 0.300,
            p: 0.05,
            q: 0.04,
            alpha0: -0.195,
            alpha: vec![2.395],
            beta: vec![0.600],
            zeta1: 0.0,
            zeta2: 0.0,
        }
    }
}

impl SimParams {
    pub fn to_model_params(&self) -> Result<ModelParams> {
        let effect = |v: &[f64]| -> Result<Effect> {
            match v.len() {
                0 => bail!("effect coefficient list is empty"),
                1 => Ok(Effect::Constant(v[0])),
                _ => Ok(Effect::Varying(v.to_vec())),
            }
        };
        Ok(ModelParams {
            phi: self.phi,
            omega: self.omega,
            sigma: self.sigma,
            p: self.p,
            q: self.q,
            alpha0: self.alpha0,
            alpha: effect(&self.alpha)?,
            beta: effect(&self.beta)?,
            zeta1: self.zeta1,
            zeta2: self.zeta2,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: String,
    pub k: usize,
    pub m: usize,
    pub span_sds: f64,
    pub lambda_alpha: Vec<f64>,
    pub lambda_beta: Vec<f64>,
    pub seed: u64,
    pub quantile: f64,
    pub quantiles: Vec<f64>,
    pub two_sided: bool,
    pub sample_draws: usize,
    pub threads: usize,
    pub n_matches: usize,
    pub t_len: usize,
    pub replications: usize,
    pub max_lag: usize,
    pub thresholds: Vec<f64>,
    pub windows: Vec<String>,
    pub first_crossing_only: bool,
    pub stake: f64,
    pub prewindiff_mean: f64,
    pub prewindiff_sd: f64,
    pub vaepdiff_mean: f64,
    pub vaepdiff_sd: f64,
    pub goals_per_match: f64,
    pub missing_rate: f64,
    pub sim_params: SimParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: "baseline".to_string(),
            k: 10,
            m: 100,
            span_sds: 5.0,
            lambda_alpha: stakeflow::estimation::DEFAULT_LAMBDA_GRID.to_vec(),
            lambda_beta: stakeflow::estimation::DEFAULT_LAMBDA_GRID.to_vec(),
            seed: 1,
            quantile: 0.99,
            quantiles: vec![0.005, 0.025, 0.5, 0.975, 0.995],
            two_sided: false,
            sample_draws: 0,
            threads: 0,
            n_matches: 306,
            t_len: stakeflow::MATCH_MINUTES,
            replications: 50,
            max_lag: 20,
            thresholds: vec![0.02, 0.03, 0.05],
            windows: vec!["45-60".into(), "60-75".into(), "75-".into()],
            first_crossing_only: false,
            stake: 1.0,
            prewindiff_mean: 0.139,
            prewindiff_sd: 0.317,
            vaepdiff_mean: 0.004,
            vaepdiff_sd: 0.161,
            goals_per_match: 2.8,
            missing_rate: 0.0,
            sim_params: SimParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("cannot parse {}", p.display()))
            }
        }
    }

    /// The configuration as recorded in outputs: the thread count is
    /// normalized out because results are independent of it, so output
    /// bytes must be too.
    pub fn canonical(&self) -> RunConfig {
        let mut canonical = self.clone();
        canonical.threads = 0;
        canonical
    }

    /// Hash of the canonical configuration, stamped into provenance headers.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.canonical()).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn parse_windows(&self) -> Result<Vec<MinuteWindow>> {
        self.windows
            .iter()
            .map(|w| {
                let (start, end) = w
                    .split_once('-')
                    .with_context(|| format!("window '{w}' is not of the form START-END"))?;
                let start: usize = start
                    .trim()
                    .parse()
                    .with_context(|| format!("bad window start in '{w}'"))?;
                let end = end.trim();
                let end = if end.is_empty() || end == "end" {
                    None
                } else {
                    Some(
                        end.parse::<usize>()
                            .with_context(|| format!("bad window end in '{w}'"))?,
                    )
                };
                Ok(MinuteWindow::new(start, end))
            })
            .collect()
    }
}

/// Parse "1" or "0.05,0.25,1" into a lambda list.
pub fn parse_lambda_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .with_context(|| format!("bad smoothing parameter '{part}'"))
        })
        .collect()
}
