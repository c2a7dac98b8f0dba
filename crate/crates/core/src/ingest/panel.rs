use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::calendar::{Quarter, Timestamp, SECONDS_PER_DAY, SECONDS_PER_HOUR};
use crate::features::top_decile_threshold;
use crate::money::Cents;

use super::{Actual, Estimate, EventKey, FilterConfig};

/// Why an estimate did not make it into a scored event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// No cross-checked actual for the firm-period.
    NoActual,
    Horizon,
    /// Issued less than `min_lead_hours` before the announcement.
    TooLate,
    /// Issued more than `max_age_days` before the announcement.
    TooEarly,
    /// A later estimate by the same identity replaced it.
    Superseded,
    NoPriorRecord,
    SurpriseCap,
    MinAnalysts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    /// Actuals with at least one estimate inside the window.
    pub candidates: usize,
    pub kept: usize,
    pub dropped_surprise_cap: usize,
    /// Below the analyst minimum; these still feed the history.
    pub dropped_min_analysts: usize,
    pub without_estimates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActualsReport {
    pub primary: usize,
    pub check: Option<usize>,
    pub kept: usize,
    pub mismatched: usize,
    pub missing_check: usize,
    pub duplicates: usize,
}

/// Per-reason accounting for one ingest pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub estimates_total: usize,
    pub estimates_kept: usize,
    pub estimate_rejects: BTreeMap<RejectReason, usize>,
    pub events: EventCounts,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub actuals: Option<ActualsReport>,
    /// Parse-stage rejects per input file.
    #[serde(default)]
    pub parse_rejects: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn rejected(&self) -> usize {
        self.estimate_rejects.values().sum()
    }

    fn bump(&mut self, reason: RejectReason, n: usize) {
        if n > 0 {
            *self.estimate_rejects.entry(reason).or_default() += n;
        }
    }
}

/// A final estimate with the per-quarter activity counts it carries into
/// feature construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelEstimate {
    pub estimate: Estimate,
    /// analyst_id or broker_id, depending on the configured identity.
    pub identity: String,
    /// Submissions by this identity for this firm-period inside the window,
    /// counted before last-estimate-wins dedup.
    pub freq: u32,
    /// Distinct firms this identity covers in the announcement quarter.
    pub ncos: u32,
    pub top10: bool,
}

impl PanelEstimate {
    pub fn value(&self) -> Cents {
        self.estimate.value
    }

    pub fn age_days(&self, announce_time: Timestamp) -> f64 {
        (announce_time - self.estimate.estimate_time) as f64 / SECONDS_PER_DAY as f64
    }
}

/// One announcement that passed the actuals check and the surprise cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelEvent {
    pub firm_id: String,
    pub period: Quarter,
    pub announce_time: Timestamp,
    pub actual: Cents,
    /// One estimate per identity with a prior record for the firm, sorted by identity.
    pub estimates: Vec<PanelEstimate>,
    /// First-time estimates: excluded from aggregation, recorded as history.
    pub newcomers: Vec<PanelEstimate>,
    /// Meets the analyst minimum; only scored events are aggregated and evaluated.
    pub scored: bool,
}

impl PanelEvent {
    pub fn key(&self) -> EventKey {
        EventKey {
            firm_id: self.firm_id.clone(),
            period: self.period,
        }
    }

    /// Calendar quarter of the announcement; the model-fitting timeline.
    pub fn quarter(&self) -> Quarter {
        Quarter::of_timestamp(self.announce_time)
    }

    pub fn all_estimates(&self) -> impl Iterator<Item = &PanelEstimate> {
        self.estimates.iter().chain(&self.newcomers)
    }
}

/// Chronological panel: every event that contributes history, in
/// `(announce_time, firm_id, period)` order, with the scored subset flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub config: FilterConfig,
    timeline: Vec<PanelEvent>,
    pub report: IngestReport,
}

impl Panel {
    pub fn timeline(&self) -> &[PanelEvent] {
        &self.timeline
    }

    /// Events that survive every rule.
    pub fn events(&self) -> impl Iterator<Item = &PanelEvent> {
        self.timeline.iter().filter(|e| e.scored)
    }

    /// The surviving rows as raw inputs: final estimates (scored and
    /// history) plus the actuals they refer to.
    pub fn records(&self) -> (Vec<Estimate>, Vec<Actual>) {
        let estimates = self
            .timeline
            .iter()
            .flat_map(|e| e.all_estimates().map(|p| p.estimate.clone()))
            .collect();
        let actuals = self
            .timeline
            .iter()
            .map(|e| Actual {
                firm_id: e.firm_id.clone(),
                period: e.period,
                announce_time: e.announce_time,
                value: e.actual,
            })
            .collect();
        (estimates, actuals)
    }
}

/// Validates primary actuals against a second source. Keys present in both
/// survive only on exact equality; keys missing from the check source
/// survive only when `keep_unchecked` is set. Without a check source every
/// unique primary actual is kept. Duplicate primary keys are ambiguous and
/// dropped entirely.
pub fn cross_check_actuals(
    primary: &[Actual],
    check: Option<&[Actual]>,
    keep_unchecked: bool,
) -> (Vec<Actual>, ActualsReport) {
    let mut report = ActualsReport {
        primary: primary.len(),
        check: check.map(<[Actual]>::len),
        ..Default::default()
    };
    let mut seen: HashMap<(&str, Quarter), usize> = HashMap::new();
    for a in primary {
        *seen.entry((a.firm_id.as_str(), a.period)).or_default() += 1;
    }
    let mut check_values: HashMap<(&str, Quarter), Option<Cents>> = HashMap::new();
    for c in check.unwrap_or(&[]) {
        check_values
            .entry((c.firm_id.as_str(), c.period))
            .and_modify(|v| {
                if *v != Some(c.value) {
                    *v = None;
                }
            })
            .or_insert(Some(c.value));
    }
    let mut kept = Vec::new();
    for a in primary {
        let key = (a.firm_id.as_str(), a.period);
        if seen[&key] > 1 {
            report.duplicates += 1;
            continue;
        }
        let keep = match check {
            None => true,
            Some(_) => match check_values.get(&key) {
                Some(Some(v)) if *v == a.value => true,
                Some(_) => {
                    report.mismatched += 1;
                    false
                }
                None => {
                    report.missing_check += 1;
                    keep_unchecked
                }
            },
        };
        if keep {
            kept.push(a.clone());
        }
    }
    report.kept = kept.len();
    (kept, report)
}

struct Census<'a> {
    /// broker -> distinct analysts
    brokers: BTreeMap<&'a str, BTreeSet<&'a str>>,
    /// identity -> distinct firms
    coverage: HashMap<&'a str, BTreeSet<&'a str>>,
}

struct Candidate {
    actual: usize,
    finals: Vec<PanelEstimate>,
}

/// Applies the exclusion rules and assembles the event timeline.
///
/// Rules, per estimate then per event: horizon code in the allowed set;
/// issued within `[announce - max_age, announce - min_lead]`; last estimate
/// per identity wins (ties go to the later input row); the identity must
/// have estimated the firm at an earlier announcement; the event's
/// simple-consensus surprise over the surviving estimates must not exceed
/// the cap; and at least `min_analysts` estimates must survive.
///
/// `actuals` are expected to be unique per (firm, period), which
/// [`cross_check_actuals`] guarantees; the first occurrence wins otherwise.
pub fn build_panel(estimates: &[Estimate], actuals: &[Actual], cfg: &FilterConfig) -> Panel {
    let mut report = IngestReport {
        estimates_total: estimates.len(),
        ..Default::default()
    };

    let mut index: HashMap<(&str, Quarter), usize> = HashMap::new();
    for (k, a) in actuals.iter().enumerate() {
        index.entry((a.firm_id.as_str(), a.period)).or_insert(k);
    }

    let min_lead = cfg.min_lead_hours * SECONDS_PER_HOUR;
    let max_age = cfg.max_age_days * SECONDS_PER_DAY;
    let mut windowed: Vec<Vec<usize>> = vec![Vec::new(); actuals.len()];
    for (i, e) in estimates.iter().enumerate() {
        let Some(&a) = index.get(&(e.firm_id.as_str(), e.period)) else {
            report.bump(RejectReason::NoActual, 1);
            continue;
        };
        if !cfg.horizon_allowed(e.horizon_code) {
            report.bump(RejectReason::Horizon, 1);
            continue;
        }
        let lead = actuals[a].announce_time - e.estimate_time;
        if lead < min_lead {
            report.bump(RejectReason::TooLate, 1);
        } else if lead > max_age {
            report.bump(RejectReason::TooEarly, 1);
        } else {
            windowed[a].push(i);
        }
    }

    let mut census: BTreeMap<Quarter, Census> = BTreeMap::new();
    for (a, rows) in windowed.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let q = Quarter::of_timestamp(actuals[a].announce_time);
        let c = census.entry(q).or_insert_with(|| Census {
            brokers: BTreeMap::new(),
            coverage: HashMap::new(),
        });
        for &i in rows {
            let e = &estimates[i];
            c.brokers
                .entry(e.broker_id.as_str())
                .or_default()
                .insert(e.analyst_id.as_str());
            c.coverage
                .entry(cfg.identity.of(e))
                .or_default()
                .insert(e.firm_id.as_str());
        }
    }
    let top_brokers: BTreeMap<Quarter, HashSet<&str>> = census
        .iter()
        .map(|(q, c)| {
            let counts: BTreeMap<&str, usize> =
                c.brokers.iter().map(|(b, a)| (*b, a.len())).collect();
            let threshold = top_decile_threshold(counts.values().copied());
            let top = counts
                .iter()
                .filter(|(_, n)| **n >= threshold)
                .map(|(b, _)| *b)
                .collect();
            (*q, top)
        })
        .collect();

    let mut candidates = Vec::new();
    for (a, rows) in windowed.iter().enumerate() {
        if rows.is_empty() {
            report.events.without_estimates += 1;
            continue;
        }
        let actual = &actuals[a];
        let q = Quarter::of_timestamp(actual.announce_time);
        let c = &census[&q];
        let mut latest: BTreeMap<&str, (usize, u32)> = BTreeMap::new();
        for &i in rows {
            let e = &estimates[i];
            latest
                .entry(cfg.identity.of(e))
                .and_modify(|(best, n)| {
                    *n += 1;
                    if e.estimate_time >= estimates[*best].estimate_time {
                        *best = i;
                    }
                })
                .or_insert((i, 1));
        }
        let mut finals = Vec::with_capacity(latest.len());
        for (identity, (i, n)) in latest {
            report.bump(RejectReason::Superseded, n as usize - 1);
            let e = &estimates[i];
            finals.push(PanelEstimate {
                estimate: e.clone(),
                identity: identity.to_string(),
                freq: n,
                ncos: c.coverage.get(identity).map_or(0, |s| s.len()) as u32,
                top10: top_brokers[&q].contains(e.broker_id.as_str()),
            });
        }
        candidates.push(Candidate { actual: a, finals });
    }
    report.events.candidates = candidates.len();
    candidates.sort_by(|x, y| {
        let (ax, ay) = (&actuals[x.actual], &actuals[y.actual]);
        (ax.announce_time, &ax.firm_id, ax.period).cmp(&(ay.announce_time, &ay.firm_id, ay.period))
    });

    let cap = cfg.surprise_cap.0.abs() as i128;
    let mut history: HashSet<(String, String)> = HashSet::new();
    let mut timeline = Vec::new();
    let mut start = 0;
    while start < candidates.len() {
        let t = actuals[candidates[start].actual].announce_time;
        let end = candidates[start..]
            .iter()
            .position(|c| actuals[c.actual].announce_time != t)
            .map_or(candidates.len(), |k| start + k);
        let mut pending = Vec::new();
        for cand in &mut candidates[start..end] {
            let actual = &actuals[cand.actual];
            let (estimates, newcomers): (Vec<_>, Vec<_>) = std::mem::take(&mut cand.finals)
                .into_iter()
                .partition(|p| history.contains(&(p.identity.clone(), actual.firm_id.clone())));
            report.bump(RejectReason::NoPriorRecord, newcomers.len());

            let basis = if estimates.is_empty() {
                &newcomers
            } else {
                &estimates
            };
            let n = basis.len() as i128;
            let sum: i128 = basis.iter().map(|p| p.value().0 as i128).sum();
            if (sum - n * actual.value.0 as i128).abs() > cap * n {
                report.events.dropped_surprise_cap += 1;
                report.bump(RejectReason::SurpriseCap, estimates.len());
                continue;
            }

            let scored = estimates.len() >= cfg.min_analysts.max(1);
            if scored {
                report.events.kept += 1;
                report.estimates_kept += estimates.len();
            } else {
                report.events.dropped_min_analysts += 1;
                report.bump(RejectReason::MinAnalysts, estimates.len());
            }
            pending.extend(
                estimates
                    .iter()
                    .chain(&newcomers)
                    .map(|p| (p.identity.clone(), actual.firm_id.clone())),
            );
            timeline.push(PanelEvent {
                firm_id: actual.firm_id.clone(),
                period: actual.period,
                announce_time: actual.announce_time,
                actual: actual.value,
                estimates,
                newcomers,
                scored,
            });
        }
        history.extend(pending);
        start = end;
    }

    Panel {
        config: cfg.clone(),
        timeline,
        report,
    }
}
