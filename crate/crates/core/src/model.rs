//! Model definition: parameter vector, linear predictors, AR(1) state
//! equation and the state-space discretization grid with its transition
//! structure.
//!
//! Observations y_t are BEINF(mu_t, sigma, p, q) with
//! `mu_t = logit^-1(alpha_0 + alpha_t * prewindiff [+ zeta_1 * scorediff_t
//! + zeta_2 * winprobteam_t] + g_t)` and the latent market sentiment follows
//! `g_t = phi g_{t-1} + beta_t vaepdiff_{t-1} + omega eta_t`.

use crate::error::{Error, Result};
use crate::splines::SplineBasis;
use crate::MATCH_MINUTES;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub(crate) fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// A covariate effect that is either constant over the match or a spline
/// coefficient vector describing a time-varying effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Constant(f64),
    Varying(Vec<f64>),
}

impl Effect {
    pub fn is_varying(&self) -> bool {
        matches!(self, Effect::Varying(_))
    }

    pub fn coefficient_count(&self) -> usize {
        match self {
            Effect::Constant(_) => 1,
            Effect::Varying(v) => v.len(),
        }
    }
}

/// Full parameter vector of the state-space model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// State persistence, in (-1, 1).
    pub phi: f64,
    /// State innovation scale, > 0.
    pub omega: f64,
    /// BEINF beta-component standard deviation, in (0, 1).
    pub sigma: f64,
    /// Point mass at 0.
    pub p: f64,
    /// Point mass at 1.
    pub q: f64,
    /// Intercept of the mean predictor.
    pub alpha0: f64,
    /// Effect of prewindiff on the observation mean.
    pub alpha: Effect,
    /// Effect of vaepdiff on the state process.
    pub beta: Effect,
    /// Effect of the current score difference (varying-coefficient model).
    pub zeta1: f64,
    /// Effect of the in-game win probability (varying-coefficient model).
    pub zeta2: f64,
}

impl ModelParams {
    /// Baseline model: constant covariate effects, no control variables.
    pub fn baseline(
        phi: f64,
        omega: f64,
        sigma: f64,
        p: f64,
        q: f64,
        alpha0: f64,
        alpha: f64,
        beta: f64,
    ) -> Self {
        Self {
            phi,
            omega,
            sigma,
            p,
            q,
            alpha0,
            alpha: Effect::Constant(alpha),
            beta: Effect::Constant(beta),
            zeta1: 0.0,
            zeta2: 0.0,
        }
    }

    pub fn is_varying(&self) -> bool {
        self.alpha.is_varying() || self.beta.is_varying()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > -1.0 && self.phi < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "phi must lie in (-1,1), got {}",
                self.phi
            )));
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "omega must be positive, got {}",
                self.omega
            )));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must lie in (0,1), got {}",
                self.sigma
            )));
        }
        if !(self.p >= 0.0) || !(self.q >= 0.0) || !(self.p + self.q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "masses must satisfy p,q >= 0 and p+q < 1, got p={}, q={}",
                self.p, self.q
            )));
        }
        if !self.is_varying() && (self.zeta1 != 0.0 || self.zeta2 != 0.0) {
            return Err(Error::InvalidParameter(
                "zeta effects are only part of the varying-coefficient predictor".into(),
            ));
        }
        Ok(())
    }

    /// Standard deviation of the stationary AR(1) law, `omega / sqrt(1 - phi^2)`.
    pub fn stationary_sd(&self) -> f64 {
        self.omega / (1.0 - self.phi * self.phi).sqrt()
    }
}

/// Model parameters together with the spline basis needed to evaluate
/// time-varying effects. For the baseline variant no basis is required.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub basis: Option<SplineBasis>,
    // alpha_t and beta_t evaluated on minutes 1..=85 (index t-1).
    alpha_curve: Vec<f64>,
    beta_curve: Vec<f64>,
}

impl Model {
    pub fn new(params: ModelParams, basis: Option<SplineBasis>) -> Result<Self> {
        params.validate()?;
        let evaluate = |effect: &Effect| -> Result<Vec<f64>> {
            match effect {
                Effect::Constant(c) => Ok(vec![*c; MATCH_MINUTES]),
                Effect::Varying(coeffs) => {
                    let basis = basis.as_ref().ok_or_else(|| {
                        Error::InvalidConfig(
                            "varying-coefficient parameters require a spline basis".into(),
                        )
                    })?;
                    if coeffs.len() != basis.len() {
                        return Err(Error::InvalidConfig(format!(
                            "coefficient vector length {} does not match basis size {}",
                            coeffs.len(),
                            basis.len()
                        )));
                    }
                    (1..=MATCH_MINUTES)
                        .map(|t| {
                            let b = basis.evaluate(t as f64)?;
                            Ok(b.iter().zip(coeffs).map(|(x, c)| x * c).sum())
                        })
                        .collect()
                }
            }
        };
        let alpha_curve = evaluate(&params.alpha)?;
        let beta_curve = evaluate(&params.beta)?;
        Ok(Self {
            params,
            basis,
            alpha_curve,
            beta_curve,
        })
    }

    pub fn baseline(params: ModelParams) -> Result<Self> {
        Model::new(params, None)
    }

    /// prewindiff effect at minute `t`.
    pub fn alpha_at(&self, t: usize) -> f64 {
        self.alpha_curve[t - 1]
    }

    /// vaepdiff effect at minute `t`.
    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta_curve[t - 1]
    }

    /// Non-state part of the linear predictor at minute `t`.
    pub fn predictor_offset(&self, series: &MatchSeries, t: usize) -> f64 {
        let mut eta = self.params.alpha0 + self.alpha_at(t) * series.prewindiff;
        if self.params.is_varying() {
            eta += self.params.zeta1 * series.scorediff[t - 1] as f64
                + self.params.zeta2 * series.winprobteam[t - 1];
        }
        eta
    }
}

/// One match worth of per-minute observations and covariates.
/// All per-minute vectors have length `len`; minute `t` lives at index `t-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSeries {
    pub match_id: String,
    /// Relative stakes on the home team; `None` marks minutes where no
    /// stakes were placed (undefined ratio).
    pub y: Vec<Option<f64>>,
    /// Difference of overround-adjusted pre-game win probabilities,
    /// home minus away. Constant within the match.
    pub prewindiff: f64,
    pub vaepdiff: Vec<f64>,
    pub scorediff: Vec<i32>,
    pub winprobteam: Vec<f64>,
    /// In-game decimal odds on a home win, where available (backtesting).
    pub odds_home: Vec<Option<f64>>,
    /// Final score difference from the home perspective, where known.
    pub final_scorediff: Option<i32>,
    /// Simulated state path, carried through for recovery diagnostics.
    pub true_state: Option<Vec<f64>>,
}

impl MatchSeries {
    pub fn new(
        match_id: impl Into<String>,
        y: Vec<Option<f64>>,
        prewindiff: f64,
        vaepdiff: Vec<f64>,
        scorediff: Vec<i32>,
        winprobteam: Vec<f64>,
    ) -> Result<Self> {
        let series = Self {
            match_id: match_id.into(),
            odds_home: vec![None; y.len()],
            final_scorediff: None,
            true_state: None,
            y,
            prewindiff,
            vaepdiff,
            scorediff,
            winprobteam,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.y.len();
        if t == 0 || t > MATCH_MINUTES {
            return Err(Error::Data(format!(
                "match {}: series length {} outside 1..={MATCH_MINUTES}",
                self.match_id, t
            )));
        }
        if self.vaepdiff.len() != t
            || self.scorediff.len() != t
            || self.winprobteam.len() != t
            || self.odds_home.len() != t
        {
            return Err(Error::Data(format!(
                "match {}: per-minute vectors have inconsistent lengths",
                self.match_id
            )));
        }
        if !(-1.0..=1.0).contains(&self.prewindiff) {
            return Err(Error::Data(format!(
                "match {}: prewindiff {} outside [-1,1]",
                self.match_id, self.prewindiff
            )));
        }
        for (i, y) in self.y.iter().enumerate() {
            if let Some(v) = y {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Data(format!(
                        "match {}: relative stake {v} at minute {} outside [0,1]",
                        self.match_id,
                        i + 1
                    )));
                }
            }
        }
        if let Some(truth) = &self.true_state {
            if truth.len() != t {
                return Err(Error::Data(format!(
                    "match {}: true state path length mismatch",
                    self.match_id
                )));
            }
        }
        Ok(())
    }
}

/// Equidistant discretization of the latent state range into `m` intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    pub lower: f64,
    pub upper: f64,
    pub m: usize,
    pub h: f64,
    pub midpoints: Vec<f64>,
}

/// Build a symmetric grid covering `span_sds` stationary standard
/// deviations of the AR(1) state on each side of zero.
pub fn build_grid(params: &ModelParams, m: usize, span_sds: f64) -> Result<StateGrid> {
    if !(params.phi > -1.0 && params.phi < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "grid construction requires |phi| < 1, got {}",
            params.phi
        )));
    }
    if m < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid needs at least 2 intervals, got {m}"
        )));
    }
    if !(span_sds > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "span_sds must be positive, got {span_sds}"
        )));
    }
    let r = span_sds * params.stationary_sd();
    let h = 2.0 * r / m as f64;
    let midpoints = (1..=m).map(|i| -r + (i as f64 - 0.5) * h).collect();
    Ok(StateGrid {
        lower: -r,
        upper: r,
        m,
        h,
        midpoints,
    })
}

/// Mean of the observation distribution at minute `t` given state value `g`.
pub fn mean_predictor(model: &Model, series: &MatchSeries, t: usize, g: f64) -> Result<f64> {
    if t < 1 || t > series.len() {
        return Err(Error::Domain(format!(
            "minute {t} outside 1..={}",
            series.len()
        )));
    }
    Ok(inv_logit(model.predictor_offset(series, t) + g))
}

/// Normal transition density of `g_next` given `g_prev`, with mean
/// `phi * g_prev + beta_t * vaepdiff_prev` and standard deviation `omega`.
/// `t` indexes the target time of `g_next`, matching the covariate lag of
/// the state equation.
pub fn state_transition_density(
    model: &Model,
    g_next: f64,
    g_prev: f64,
    vaepdiff_prev: f64,
    t: usize,
) -> f64 {
    let mean = model.params.phi * g_prev + model.beta_at(t) * vaepdiff_prev;
    normal_pdf(g_next, mean, model.params.omega)
}

pub(crate) fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z - LN_SQRT_2PI - sd.ln()).exp()
}

/// Transition probability matrix with entries
/// `gamma_ij = h * f(c_j | c_i)`; rows sum approximately to one when the
/// grid spans the conditional distribution. Rows are not renormalized.
pub fn transition_matrix(
    model: &Model,
    grid: &StateGrid,
    vaepdiff_prev: f64,
    t: usize,
) -> Array2<f64> {
    let m = grid.m;
    let mut out = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = grid.h
                * state_transition_density(model, grid.midpoints[j], grid.midpoints[i], vaepdiff_prev, t);
        }
    }
    out
}

/// Initial state weights `delta_i = h * f(c_i)` under the stationary AR(1)
/// law N(0, omega^2 / (1 - phi^2)).
pub fn initial_weights(model: &Model, grid: &StateGrid) -> Vec<f64> {
    let sd = model.params.stationary_sd();
    grid.midpoints
        .iter()
        .map(|&c| grid.h * normal_pdf(c, 0.0, sd))
        .collect()
}
