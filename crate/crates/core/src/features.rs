//! The six per-prediction regressors and their per-event normalization.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_VARIABLES: usize = 6;

/// Regressor order used everywhere (design matrix columns, model betas).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Age,
    Freq,
    Ncos,
    Top10,
    Exp,
    Mae,
}

impl Variable {
    pub const ALL: [Variable; N_VARIABLES] = [
        Variable::Age,
        Variable::Freq,
        Variable::Ncos,
        Variable::Top10,
        Variable::Exp,
        Variable::Mae,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::Age => "AGE",
            Variable::Freq => "FREQ",
            Variable::Ncos => "NCOS",
            Variable::Top10 => "TOP10",
            Variable::Exp => "EXP",
            Variable::Mae => "MAE",
        }
    }
}

/// Raw regressors for one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    /// Days from the estimate to the announcement.
    pub age: f64,
    pub freq: u32,
    pub ncos: u32,
    pub top10: bool,
    /// Prior periods this identity estimated the firm.
    pub exp: u32,
    /// Mean prior absolute (bias-adjusted) error for the firm, in cents.
    pub mae: f64,
}

impl FeatureRow {
    pub fn values(&self) -> [f64; N_VARIABLES] {
        [
            self.age,
            self.freq as f64,
            self.ncos as f64,
            if self.top10 { 1.0 } else { 0.0 },
            self.exp as f64,
            self.mae,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// (v - mean) / mean
    #[default]
    Normalized,
    /// v - mean
    CenteredOnly,
}

/// Event-relative regressors plus the event-relative dependent variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRow {
    pub x: [f64; N_VARIABLES],
    pub daae: f64,
}

/// Rescales one variable across an event's analysts. A zero event mean maps
/// every value to 0 so the design keeps its width.
pub fn rescale(values: &[f64], scaling: Scaling) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    match scaling {
        _ if mean == 0.0 => vec![0.0; values.len()],
        Scaling::Normalized => values.iter().map(|v| (v - mean) / mean).collect(),
        Scaling::CenteredOnly => values.iter().map(|v| v - mean).collect(),
    }
}

/// Normalizes every regressor and the absolute adjusted errors of one event.
pub fn normalize_event(rows: &[FeatureRow], aae: &[f64], scaling: Scaling) -> Vec<NormalizedRow> {
    debug_assert_eq!(rows.len(), aae.len());
    let raw: Vec<[f64; N_VARIABLES]> = rows.iter().map(FeatureRow::values).collect();
    let columns: Vec<Vec<f64>> = (0..N_VARIABLES)
        .map(|k| rescale(&raw.iter().map(|r| r[k]).collect::<Vec<_>>(), scaling))
        .collect();
    let daae = rescale(aae, scaling);
    (0..rows.len())
        .map(|i| NormalizedRow {
            x: std::array::from_fn(|k| columns[k][i]),
            daae: daae[i],
        })
        .collect()
}

/// Analyst count of the broker at the top-decile cutoff rank
/// (`ceil(0.1 * B)` of `B` brokers). Brokers at or above it are top-decile,
/// so ties at the cutoff are all included.
pub fn top_decile_threshold(counts: impl IntoIterator<Item = usize>) -> usize {
    let mut counts: Vec<usize> = counts.into_iter().collect();
    if counts.is_empty() {
        return usize::MAX;
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let cutoff = (counts.len() as f64 * 0.1).ceil().max(1.0) as usize;
    counts[cutoff - 1]
}

/// Whether `broker_id` is in the top decile of the quarter's census
/// (broker -> number of analysts).
pub fn top10_flag(broker_id: &str, census: &BTreeMap<String, usize>) -> bool {
    let threshold = top_decile_threshold(census.values().copied());
    census.get(broker_id).is_some_and(|n| *n >= threshold)
}

/// Mean of prior absolute adjusted errors. An empty history means a
/// prediction slipped past the prior-record rule.
pub fn mae_at(history: &[f64]) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::Internal(
            "MAE requested for a prediction without prior history".into(),
        ));
    }
    Ok(history.iter().sum::<f64>() / history.len() as f64)
}

/// Running AAE totals per (identity, firm); feeds MAE.
#[derive(Debug, Clone, Default)]
pub struct AccuracyLedger {
    entries: HashMap<(String, String), (f64, u32)>,
}

impl AccuracyLedger {
    pub fn record(&mut self, identity: &str, firm: &str, aae: f64) {
        let e = self
            .entries
            .entry((identity.to_string(), firm.to_string()))
            .or_default();
        e.0 += aae;
        e.1 += 1;
    }

    pub fn mae(&self, identity: &str, firm: &str) -> Result<f64> {
        match self.entries.get(&(identity.to_string(), firm.to_string())) {
            Some((sum, n)) if *n > 0 => Ok(sum / *n as f64),
            _ => mae_at(&[]),
        }
    }
}
