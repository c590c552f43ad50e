//! Dataset ingestion and preprocessing: raw per-minute stake records to
//! model-ready series, descriptive statistics and cross-correlation
//! diagnostics.
//!
//! Raw CSV schema (header required, '.' decimal separator):
//! `match_id,minute,stake_home,stake_away,odds_home,odds_away,odds_draw,vaepdiff,scorediff,winprob_home`
//! Pre-game odds ride on a minute-0 row. Processed files append the derived
//! columns `relativestake,prewindiff,winprobteam` (and pass through the
//! optional `true_state` column emitted by the simulator), so re-ingesting
//! a processed file reproduces it byte for byte.

use crate::error::{Error, Result};
use crate::model::MatchSeries;
use crate::MATCH_MINUTES;
use std::collections::HashMap;
use std::io::{Read, Write};

pub const BASE_COLUMNS: [&str; 10] = [
    "match_id",
    "minute",
    "stake_home",
    "stake_away",
    "odds_home",
    "odds_away",
    "odds_draw",
    "vaepdiff",
    "scorediff",
    "winprob_home",
];
const DERIVED_COLUMNS: [&str; 3] = ["relativestake", "prewindiff", "winprobteam"];

/// One raw minute of one match. `minute` 0 carries the pre-game odds.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMinuteRecord {
    pub match_id: String,
    pub minute: u32,
    pub stake_home: f64,
    pub stake_away: f64,
    pub odds_home: Option<f64>,
    pub odds_away: Option<f64>,
    pub odds_draw: Option<f64>,
    pub vaepdiff: f64,
    pub scorediff: i32,
    pub winprob_home: Option<f64>,
    pub true_state: Option<f64>,
}

/// All raw rows of one match, sorted by minute.
#[derive(Debug, Clone)]
pub struct RawMatch {
    pub match_id: String,
    pub records: Vec<RawMinuteRecord>,
    /// prewindiff carried on processed files (no minute-0 row needed there).
    pub prewindiff_hint: Option<f64>,
}

/// Share of stakes placed on the home team. Undefined (missing) when no
/// stakes were placed on either side.
pub fn relative_stakes(stake_home: f64, stake_away: f64) -> Result<Option<f64>> {
    if stake_home < 0.0 || stake_away < 0.0 {
        return Err(Error::Data(format!(
            "stakes must be nonnegative, got ({stake_home}, {stake_away})"
        )));
    }
    let total = stake_home + stake_away;
    if total == 0.0 {
        return Ok(None);
    }
    Ok(Some(stake_home / total))
}

/// Implied outcome probabilities from decimal odds, with the overround
/// removed by proportional normalization. The draw probability is computed
/// as the complement so the three probabilities sum to exactly one.
pub fn implied_probability(
    odds_home: f64,
    odds_away: f64,
    odds_draw: f64,
) -> Result<(f64, f64, f64)> {
    for (name, o) in [
        ("odds_home", odds_home),
        ("odds_away", odds_away),
        ("odds_draw", odds_draw),
    ] {
        if !(o > 1.0) || !o.is_finite() {
            return Err(Error::Data(format!(
                "{name} must be a decimal odd greater than 1, got {o}"
            )));
        }
    }
    let inv_h = 1.0 / odds_home;
    let inv_a = 1.0 / odds_away;
    let inv_d = 1.0 / odds_draw;
    let booksum = inv_h + inv_a + inv_d;
    let p_home = inv_h / booksum;
    let p_away = inv_a / booksum;
    Ok((p_home, p_away, 1.0 - p_home - p_away))
}

/// Build the model-ready series for one match: truncate at minute 85,
/// align per-minute vectors, mark zero-stake minutes as missing and derive
/// prewindiff / winprobteam from odds.
pub fn build_match_series(raw: &RawMatch) -> Result<MatchSeries> {
    let mut by_minute: HashMap<u32, &RawMinuteRecord> = HashMap::new();
    for rec in &raw.records {
        if by_minute.insert(rec.minute, rec).is_some() {
            return Err(Error::Data(format!(
                "match {}: duplicate minute {}",
                raw.match_id, rec.minute
            )));
        }
    }
    let max_minute = raw
        .records
        .iter()
        .map(|r| r.minute)
        .max()
        .unwrap_or(0);
    if max_minute < 1 {
        return Err(Error::Data(format!(
            "match {}: no in-game minutes",
            raw.match_id
        )));
    }
    let t_len = (max_minute as usize).min(MATCH_MINUTES);

    let pregame = by_minute.get(&0);
    let pregame_probs = match pregame {
        Some(rec) => match (rec.odds_home, rec.odds_away, rec.odds_draw) {
            (Some(h), Some(a), Some(d)) => Some(implied_probability(h, a, d)?),
            _ => None,
        },
        None => None,
    };
    let prewindiff = match (pregame_probs, raw.prewindiff_hint) {
        (Some((ph, pa, _)), _) => ph - pa,
        (None, Some(hint)) => hint,
        (None, None) => {
            return Err(Error::Data(format!(
                "match {}: missing pre-game odds (no minute-0 row and no prewindiff column)",
                raw.match_id
            )))
        }
    };

    let mut y = Vec::with_capacity(t_len);
    let mut vaepdiff = Vec::with_capacity(t_len);
    let mut scorediff = Vec::with_capacity(t_len);
    let mut winprobteam = Vec::with_capacity(t_len);
    let mut odds_home = Vec::with_capacity(t_len);
    let mut truth = Vec::with_capacity(t_len);
    let mut last_score = 0i32;
    let mut last_winprob = pregame_probs
        .map(|(ph, _, _)| ph)
        .or_else(|| pregame.and_then(|r| r.winprob_home));

    for minute in 1..=t_len as u32 {
        match by_minute.get(&minute) {
            Some(rec) => {
                y.push(relative_stakes(rec.stake_home, rec.stake_away)?);
                vaepdiff.push(rec.vaepdiff);
                last_score = rec.scorediff;
                scorediff.push(last_score);
                let wp = match (rec.odds_home, rec.odds_away, rec.odds_draw) {
                    (Some(h), Some(a), Some(d)) => Some(implied_probability(h, a, d)?.0),
                    _ => rec.winprob_home,
                };
                if let Some(w) = wp {
                    last_winprob = Some(w);
                }
                let w = last_winprob.ok_or_else(|| {
                    Error::Data(format!(
                        "match {}: no win probability available at minute {minute}",
                        raw.match_id
                    ))
                })?;
                winprobteam.push(w);
                odds_home.push(rec.odds_home);
                truth.push(rec.true_state);
            }
            None => {
                y.push(None);
                vaepdiff.push(0.0);
                scorediff.push(last_score);
                let w = last_winprob.ok_or_else(|| {
                    Error::Data(format!(
                        "match {}: no win probability available at minute {minute}",
                        raw.match_id
                    ))
                })?;
                winprobteam.push(w);
                odds_home.push(None);
                truth.push(None);
            }
        }
    }

    let final_scorediff = raw
        .records
        .iter()
        .filter(|r| r.minute >= 1)
        .max_by_key(|r| r.minute)
        .map(|r| r.scorediff);

    let mut series = MatchSeries::new(
        raw.match_id.clone(),
        y,
        prewindiff,
        vaepdiff,
        scorediff,
        winprobteam,
    )?;
    series.odds_home = odds_home;
    series.final_scorediff = final_scorediff;
    if truth.iter().all(|t| t.is_some()) {
        series.true_state = Some(truth.into_iter().map(|t| t.unwrap()).collect());
    }
    Ok(series)
}

/// A parsed dataset: raw rows grouped per match plus the derived series.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub raw: Vec<RawMatch>,
    pub series: Vec<MatchSeries>,
}

impl Dataset {
    pub fn from_raw(raw: Vec<RawMatch>) -> Result<Self> {
        let series = raw.iter().map(build_match_series).collect::<Result<Vec<_>>>()?;
        Ok(Self { raw, series })
    }
}

fn parse_f64(field: &str, name: &str, line: u64) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Data(format!("line {line}: cannot parse {name} from '{field}'"))
    })
}

fn parse_opt_f64(field: &str, name: &str, line: u64) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    parse_f64(t, name, line).map(Some)
}

/// Read a raw or processed dataset CSV. Lines starting with `#` are
/// treated as comments (provenance headers).
pub fn read_raw_csv<R: Read>(reader: R) -> Result<Vec<RawMatch>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (idx, expected) in BASE_COLUMNS.iter().enumerate() {
        match headers.get(idx) {
            Some(actual) if actual == *expected => {}
            _ => {
                return Err(Error::Data(format!(
                    "malformed header: missing column '{expected}' at position {idx}"
                )))
            }
        }
    }
    let mut col_index: HashMap<&str, usize> = HashMap::new();
    for (idx, name) in headers.iter().enumerate().skip(BASE_COLUMNS.len()) {
        if !DERIVED_COLUMNS.contains(&name) && name != "true_state" {
            return Err(Error::Data(format!("unknown column '{name}'")));
        }
        col_index.insert(
            DERIVED_COLUMNS
                .iter()
                .chain(std::iter::once(&"true_state"))
                .find(|c| **c == name)
                .expect("checked membership"),
            idx,
        );
    }
    let truth_col = col_index.get("true_state").copied();
    let prewindiff_col = col_index.get("prewindiff").copied();

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, RawMatch> = HashMap::new();
    for (row_no, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row_no as u64 + 2;
        let match_id = row.get(0).unwrap_or_default().to_string();
        if match_id.is_empty() {
            return Err(Error::Data(format!("line {line}: empty match_id")));
        }
        let minute: u32 = row
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: cannot parse minute")))?;
        let record = RawMinuteRecord {
            match_id: match_id.clone(),
            minute,
            stake_home: parse_f64(row.get(2).unwrap_or_default(), "stake_home", line)?,
            stake_away: parse_f64(row.get(3).unwrap_or_default(), "stake_away", line)?,
            odds_home: parse_opt_f64(row.get(4).unwrap_or_default(), "odds_home", line)?,
            odds_away: parse_opt_f64(row.get(5).unwrap_or_default(), "odds_away", line)?,
            odds_draw: parse_opt_f64(row.get(6).unwrap_or_default(), "odds_draw", line)?,
            vaepdiff: parse_f64(row.get(7).unwrap_or_default(), "vaepdiff", line)?,
            scorediff: row
                .get(8)
                .unwrap_or_default()
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: cannot parse scorediff")))?,
            winprob_home: parse_opt_f64(row.get(9).unwrap_or_default(), "winprob_home", line)?,
            true_state: match truth_col {
                Some(idx) => parse_opt_f64(row.get(idx).unwrap_or_default(), "true_state", line)?,
                None => None,
            },
        };
        let prewindiff_hint = match prewindiff_col {
            Some(idx) => parse_opt_f64(row.get(idx).unwrap_or_default(), "prewindiff", line)?,
            None => None,
        };
        let entry = grouped.entry(match_id.clone()).or_insert_with(|| {
            order.push(match_id.clone());
            RawMatch {
                match_id,
                records: Vec::new(),
                prewindiff_hint: None,
            }
        });
        if entry.prewindiff_hint.is_none() {
            entry.prewindiff_hint = prewindiff_hint;
        }
        entry.records.push(record);
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut m = grouped.remove(&id).expect("grouped by construction");
        m.records.sort_by_key(|r| r.minute);
        out.push(m);
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write a raw dataset CSV (the simulator's output format).
pub fn write_raw_csv<W: Write>(
    writer: W,
    matches: &[RawMatch],
    include_true_state: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if include_true_state {
        header.push("true_state");
    }
    w.write_record(&header)?;
    for m in matches {
        for r in &m.records {
            let mut row = vec![
                r.match_id.clone(),
                r.minute.to_string(),
                r.stake_home.to_string(),
                r.stake_away.to_string(),
                fmt_opt(r.odds_home),
                fmt_opt(r.odds_away),
                fmt_opt(r.odds_draw),
                r.vaepdiff.to_string(),
                r.scorediff.to_string(),
                fmt_opt(r.winprob_home),
            ];
            if include_true_state {
                row.push(fmt_opt(r.true_state));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the processed dataset: one row per modelled minute with the
/// derived columns appended.
pub fn write_processed_csv<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let include_truth = dataset.series.iter().any(|s| s.true_state.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    header.extend(DERIVED_COLUMNS);
    if include_truth {
        header.push("true_state");
    }
    w.write_record(&header)?;
    for (raw, series) in dataset.raw.iter().zip(&dataset.series) {
        let by_minute: HashMap<u32, &RawMinuteRecord> =
            raw.records.iter().map(|r| (r.minute, r)).collect();
        for t in 1..=series.len() {
            let rec = by_minute.get(&(t as u32));
            let (stake_home, stake_away, oh, oa, od, wih) = match rec {
                Some(r) => (
                    r.stake_home,
                    r.stake_away,
                    r.odds_home,
                    r.odds_away,
                    r.odds_draw,
                    r.winprob_home,
                ),
                None => (0.0, 0.0, None, None, None, None),
            };
            let mut row = vec![
                series.match_id.clone(),
                t.to_string(),
                stake_home.to_string(),
                stake_away.to_string(),
                fmt_opt(oh),
                fmt_opt(oa),
                fmt_opt(od),
                series.vaepdiff[t - 1].to_string(),
                series.scorediff[t - 1].to_string(),
                fmt_opt(wih),
                fmt_opt(series.y[t - 1]),
                series.prewindiff.to_string(),
                series.winprobteam[t - 1].to_string(),
            ];
            if include_truth {
                row.push(fmt_opt(
                    series.true_state.as_ref().map(|ts| ts[t - 1]),
                ));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VariableSummary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

fn summarize(name: &str, values: &[f64]) -> VariableSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    VariableSummary {
        name: name.to_string(),
        n,
        mean,
        sd,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Descriptive statistics for relativestake, prewindiff and vaepdiff.
/// prewindiff is constant within matches, so its standard deviation is
/// computed from one value per match while its count and mean follow the
/// per-minute layout of the data.
pub fn descriptives(matches: &[MatchSeries]) -> Vec<VariableSummary> {
    let stakes: Vec<f64> = matches
        .iter()
        .flat_map(|m| m.y.iter().flatten().copied())
        .collect();
    let vaep: Vec<f64> = matches
        .iter()
        .flat_map(|m| m.vaepdiff.iter().copied())
        .collect();
    let prewin_replicated: Vec<f64> = matches
        .iter()
        .flat_map(|m| std::iter::repeat(m.prewindiff).take(m.len()))
        .collect();
    let prewin_per_match: Vec<f64> = matches.iter().map(|m| m.prewindiff).collect();

    let mut prewin = summarize("prewindiff", &prewin_replicated);
    prewin.sd = summarize("prewindiff", &prewin_per_match).sd;

    vec![
        summarize("relativestake", &stakes),
        prewin,
        summarize("vaepdiff", &vaep),
    ]
}

#[derive(Debug, Clone)]
pub struct MatchCrossCorrelation {
    pub match_id: String,
    /// lags 0..=max_lag of corr(vaepdiff_t, relativestake_{t+lag})
    pub lags: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CrossCorrelationResult {
    pub per_match: Vec<MatchCrossCorrelation>,
    pub mean: Vec<f64>,
    pub skipped: Vec<String>,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Per-match cross-correlations between vaepdiff and relative stakes on the
/// segment before the first goal, plus the per-lag mean across matches.
/// Matches whose usable segment is shorter than `max_lag + 2` are skipped.
pub fn cross_correlation(matches: &[MatchSeries], max_lag: usize) -> Result<CrossCorrelationResult> {
    if max_lag < 1 {
        return Err(Error::InvalidConfig(format!(
            "max_lag must be at least 1, got {max_lag}"
        )));
    }
    let mut per_match = Vec::new();
    let mut skipped = Vec::new();
    for m in matches {
        // segment strictly before the first score change
        let seg_end = m
            .scorediff
            .iter()
            .position(|&s| s != 0)
            .unwrap_or(m.len());
        if seg_end < max_lag + 2 {
            skipped.push(m.match_id.clone());
            continue;
        }
        let mut lags = Vec::with_capacity(max_lag + 1);
        let mut usable = true;
        for lag in 0..=max_lag {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for t in 0..seg_end.saturating_sub(lag) {
                if let Some(y) = m.y[t + lag] {
                    xs.push(m.vaepdiff[t]);
                    ys.push(y);
                }
            }
            match pearson(&xs, &ys) {
                Some(r) => lags.push(r),
                None => {
                    usable = false;
                    break;
                }
            }
        }
        if usable {
            per_match.push(MatchCrossCorrelation {
                match_id: m.match_id.clone(),
                lags,
            });
        } else {
            skipped.push(m.match_id.clone());
        }
    }
    let mut mean = vec![0.0; max_lag + 1];
    if !per_match.is_empty() {
        for mc in &per_match {
            for (lag, v) in mc.lags.iter().enumerate() {
                mean[lag] += v;
            }
        }
        for v in mean.iter_mut() {
            *v /= per_match.len() as f64;
        }
    }
    Ok(CrossCorrelationResult {
        per_match,
        mean,
        skipped,
    })
}
