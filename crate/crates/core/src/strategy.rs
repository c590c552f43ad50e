//! Backtest of threshold in-game betting strategies: bet one unit on the
//! home team whenever vaepdiff exceeds a threshold, within minute windows,
//! restricted to matches that are tied after halftime. Bets settle on the
//! final match outcome; draws lose the home bet.

use crate::error::{Error, Result};
use crate::model::MatchSeries;
use serde::{Deserialize, Serialize};

/// A half-open minute window `[start, end)`; `end = None` runs to the end
/// of the match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinuteWindow {
    pub start: usize,
    pub end: Option<usize>,
}

impl MinuteWindow {
    pub fn new(start: usize, end: Option<usize>) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, minute: usize) -> bool {
        minute >= self.start && self.end.map_or(true, |e| minute < e)
    }

    pub fn label(&self) -> String {
        match self.end {
            Some(e) => format!("{}-{}", self.start, e),
            None => format!("{}-end", self.start),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub thresholds: Vec<f64>,
    pub windows: Vec<MinuteWindow>,
    pub stake: f64,
    /// Place only the first qualifying bet per window instead of one per
    /// qualifying minute.
    pub first_crossing_only: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.02, 0.03, 0.05],
            windows: vec![
                MinuteWindow::new(45, Some(60)),
                MinuteWindow::new(60, Some(75)),
                MinuteWindow::new(75, None),
            ],
            stake: 1.0,
            first_crossing_only: false,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.windows.is_empty() {
            return Err(Error::InvalidConfig(
                "strategy needs at least one threshold and one window".into(),
            ));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidConfig(
                "strategy thresholds must be positive".into(),
            ));
        }
        if !(self.stake > 0.0) {
            return Err(Error::InvalidConfig("stake must be positive".into()));
        }
        let mut sorted = self.windows.clone();
        sorted.sort_by_key(|w| w.start);
        for pair in sorted.windows(2) {
            match pair[0].end {
                Some(e) if e <= pair[1].start => {}
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "windows {} and {} overlap",
                        pair[0].label(),
                        pair[1].label()
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Totals for one (window, threshold) cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BacktestCell {
    pub bets: usize,
    pub staked: f64,
    pub payout: f64,
    pub skipped_missing_odds: usize,
}

impl BacktestCell {
    /// Net return per unit staked; `None` when no bet was placed
    /// (absence, not break-even).
    pub fn return_rate(&self) -> Option<f64> {
        if self.staked > 0.0 {
            Some((self.payout - self.staked) / self.staked)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestTable {
    pub thresholds: Vec<f64>,
    pub windows: Vec<MinuteWindow>,
    /// cells[window][threshold]
    pub cells: Vec<Vec<BacktestCell>>,
    pub eligible_matches: usize,
    /// Eligible matches without a known final result, skipped with notice.
    pub skipped_no_result: Vec<String>,
}

const HALFTIME_MINUTE: usize = 45;

fn is_eligible(series: &MatchSeries) -> bool {
    series.len() >= HALFTIME_MINUTE && series.scorediff[HALFTIME_MINUTE - 1] == 0
}

/// Run the threshold strategy over a dataset. Only matches tied at minute
/// 45 qualify; per-cell returns are (total payout - total staked) / total
/// staked.
pub fn backtest(matches: &[MatchSeries], config: &StrategyConfig) -> Result<BacktestTable> {
    config.validate()?;
    let mut cells =
        vec![vec![BacktestCell::default(); config.thresholds.len()]; config.windows.len()];
    let mut eligible_matches = 0usize;
    let mut skipped_no_result = Vec::new();

    for series in matches {
        if !is_eligible(series) {
            continue;
        }
        let Some(final_scorediff) = series.final_scorediff else {
            skipped_no_result.push(series.match_id.clone());
            continue;
        };
        eligible_matches += 1;
        let home_won = final_scorediff > 0;
        for (wi, window) in config.windows.iter().enumerate() {
            for (ti, &threshold) in config.thresholds.iter().enumerate() {
                let cell = &mut cells[wi][ti];
                for minute in 1..=series.len() {
                    if !window.contains(minute) || series.vaepdiff[minute - 1] <= threshold {
                        continue;
                    }
                    let Some(odds) = series.odds_home[minute - 1] else {
                        cell.skipped_missing_odds += 1;
                        continue;
                    };
                    cell.bets += 1;
                    cell.staked += config.stake;
                    if home_won {
                        cell.payout += config.stake * odds;
                    }
                    if config.first_crossing_only {
                        break;
                    }
                }
            }
        }
    }

    Ok(BacktestTable {
        thresholds: config.thresholds.clone(),
        windows: config.windows.clone(),
        cells,
        eligible_matches,
        skipped_no_result,
    })
}
