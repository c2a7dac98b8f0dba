//! Improvement statistics of an aggregate against the simple consensus.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PanelEvent;
use crate::money::mean_cents;

/// Signed surprises of one event: consensus - actual and prediction - actual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurprisePair {
    pub original: f64,
    pub improved: f64,
}

impl SurprisePair {
    pub fn new(original: f64, improved: f64) -> Self {
        SurprisePair { original, improved }
    }

    pub fn scaled(self, c: f64) -> Self {
        SurprisePair::new(self.original * c, self.improved * c)
    }
}

/// 1 - |improved| / |original|. A zero original surprise gives `-inf`
/// unless the improved surprise is zero too, which counts as no change.
pub fn surprise_improvement(pair: SurprisePair) -> f64 {
    let (o, i) = (pair.original.abs(), pair.improved.abs());
    if o == 0.0 {
        if i == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - i / o
    }
}

/// Median of the per-event improvements. Infinite sentinels take part in
/// the ordering; for an even count the two middle values are averaged when
/// both are finite, otherwise the finite one (or the shared sentinel) wins.
pub fn median_stat(pairs: &[SurprisePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("median of no surprise pairs"));
    }
    let mut v: Vec<f64> = pairs.iter().copied().map(surprise_improvement).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        return Ok(v[n / 2]);
    }
    let (a, b) = (v[n / 2 - 1], v[n / 2]);
    Ok(match (a.is_finite(), b.is_finite()) {
        (true, true) => (a + b) / 2.0,
        (true, false) => a,
        (false, true) => b,
        (false, false) if a == b => a,
        (false, false) => 0.0,
    })
}

/// 1 - sum|improved| / sum|original|; `None` when every original is zero.
pub fn average_stat(pairs: &[SurprisePair]) -> Option<f64> {
    let (num, den) = pairs.iter().fold((0.0, 0.0), |(n, d), p| {
        (n + p.improved.abs(), d + p.original.abs())
    });
    (den > 0.0).then(|| 1.0 - num / den)
}

/// Simple regression of improved on original surprise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    /// 1 - slope
    pub trend: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// `None` with fewer than three pairs or no variance in the originals.
pub fn trend_stat(pairs: &[SurprisePair]) -> Option<Trend> {
    if pairs.len() < 3 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.original).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.improved).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pairs {
        let (dx, dy) = (p.original - mx, p.improved - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx.is_nan() || sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    Some(Trend {
        trend: 1.0 - slope,
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Index of the prediction nearest `actual`; the first one on ties.
pub fn closest_index(predictions: &[f64], actual: f64) -> Option<usize> {
    predictions
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (*a - actual).abs().total_cmp(&(*b - actual).abs()))
        .map(|(i, _)| i)
}

/// Smallest absolute deviation of any prediction from `actual`.
pub fn closest_analyst(predictions: &[f64], actual: f64) -> Option<f64> {
    closest_index(predictions, actual).map(|i| (predictions[i] - actual).abs())
}

/// Descriptive statistics of a set of announcement events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub symbols: usize,
    pub reports: usize,
    pub predictions: usize,
    pub analysts: usize,
    /// |actual - simple consensus|, cents per share.
    pub mean_abs_surprise: f64,
    pub median_abs_surprise: f64,
    pub negative_surprise_share: f64,
    pub actual_in_range_share: f64,
}

pub fn descriptive_stats<'a>(
    events: impl IntoIterator<Item = &'a PanelEvent>,
) -> Result<DescriptiveStats> {
    let mut firms = BTreeSet::new();
    let mut analysts = BTreeSet::new();
    let mut predictions = 0;
    let mut surprises = Vec::new();
    let (mut negative, mut in_range) = (0usize, 0usize);
    for e in events {
        firms.insert(e.firm_id.as_str());
        predictions += e.estimates.len();
        analysts.extend(e.estimates.iter().map(|p| p.identity.as_str()));
        let consensus = mean_cents(e.estimates.iter().map(|p| p.value()))
            .ok_or(Error::Empty("event without estimates"))?;
        let surprise = e.actual.as_f64() - consensus;
        if surprise < 0.0 {
            negative += 1;
        }
        let lo = e
            .estimates
            .iter()
            .map(|p| p.value())
            .min()
            .unwrap_or_default();
        let hi = e
            .estimates
            .iter()
            .map(|p| p.value())
            .max()
            .unwrap_or_default();
        if (lo..=hi).contains(&e.actual) {
            in_range += 1;
        }
        surprises.push(surprise.abs());
    }
    if surprises.is_empty() {
        return Err(Error::Empty("descriptive statistics of an empty panel"));
    }
    let n = surprises.len();
    surprises.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        surprises[n / 2]
    } else {
        (surprises[n / 2 - 1] + surprises[n / 2]) / 2.0
    };
    Ok(DescriptiveStats {
        symbols: firms.len(),
        reports: n,
        predictions,
        analysts: analysts.len(),
        mean_abs_surprise: surprises.iter().sum::<f64>() / n as f64,
        median_abs_surprise: median,
        negative_surprise_share: negative as f64 / n as f64,
        actual_in_range_share: in_range as f64 / n as f64,
    })
}

/// Statistics for one mode over the common evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub name: String,
    pub label: String,
    pub median_stat: Option<f64>,
    pub average_stat: Option<f64>,
    pub trend_stat: Option<f64>,
    pub r_squared: Option<f64>,
    pub n_events: usize,
    /// The trend figure is only headline for the full mode.
    pub trend_supplementary: bool,
}

pub fn summarize(
    name: &str,
    label: &str,
    pairs: &[SurprisePair],
    headline_trend: bool,
) -> ModeResult {
    let trend = trend_stat(pairs);
    ModeResult {
        name: name.to_string(),
        label: label.to_string(),
        median_stat: median_stat(pairs).ok(),
        average_stat: average_stat(pairs),
        trend_stat: trend.map(|t| t.trend),
        r_squared: trend.map(|t| t.r_squared),
        n_events: pairs.len(),
        trend_supplementary: !headline_trend,
    }
}
