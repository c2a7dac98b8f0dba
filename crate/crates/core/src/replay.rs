//! Chronological replay of a panel under one mode.
//!
//! Events are visited in announcement order. Biases, experience and MAE are
//! read from ledgers that only hold earlier announcements; an announcement
//! group sharing one timestamp reads everything before any of it is
//! recorded. Each calendar quarter's rows fit that quarter's model, which is
//! applied to the following quarter only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregate::{
    improved_consensus, simple_consensus, AnalystInput, BiasMode, Estimator, EventAggregate,
    ModeConfig, PreviousModel,
};
use crate::bias::{blended_bias, signed_error, ErrorLedger, Granularity};
use crate::calendar::{Quarter, Timestamp};
use crate::error::Result;
use crate::evaluate::{closest_index, SurprisePair};
use crate::features::{normalize_event, AccuracyLedger, FeatureRow, NormalizedRow};
use crate::ingest::{EventKey, Panel, PanelEstimate, PanelEvent};
use crate::model::{fit_period, FitError, PeriodModel};
use crate::money::Cents;

/// Aggregation result for one scored event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub firm_id: String,
    pub period: Quarter,
    pub announce_time: Timestamp,
    pub actual: Cents,
    pub identities: Vec<String>,
    pub aggregate: EventAggregate,
}

impl EventOutcome {
    pub fn key(&self) -> EventKey {
        EventKey {
            firm_id: self.firm_id.clone(),
            period: self.period,
        }
    }

    pub fn quarter(&self) -> Quarter {
        Quarter::of_timestamp(self.announce_time)
    }

    pub fn n_analysts(&self) -> usize {
        self.identities.len()
    }

    pub fn surprise(&self) -> SurprisePair {
        let a = self.actual.as_f64();
        SurprisePair::new(
            self.aggregate.simple_consensus - a,
            self.aggregate.improved - a,
        )
    }
}

/// Per-quarter fit outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub quarter: Quarter,
    pub model: Result<PeriodModel, FitError>,
}

/// Raw and normalized regressors of one scored prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrace {
    pub firm_id: String,
    pub period: Quarter,
    pub identity: String,
    pub raw: FeatureRow,
    pub aae: f64,
    pub normalized: NormalizedRow,
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub events: Vec<EventOutcome>,
    pub models: Vec<ModelRecord>,
    pub features: Vec<FeatureTrace>,
    /// Identity x firm error history at the end of the replay.
    pub pair_ledger: ErrorLedger,
}

/// Mode-dependent bias lookup.
struct BiasBook {
    mode: Option<BiasMode>,
    primary: Option<ErrorLedger>,
    secondary: Option<ErrorLedger>,
}

impl BiasBook {
    fn new(mode: &ModeConfig) -> Self {
        if !mode.use_bias {
            return BiasBook {
                mode: None,
                primary: None,
                secondary: None,
            };
        }
        let (primary, secondary) = match mode.bias {
            BiasMode::Keyed(Granularity::AnalystFirm) => (None, None),
            BiasMode::Keyed(g) => (Some(ErrorLedger::new(g)), None),
            BiasMode::Blend { .. } => (
                Some(ErrorLedger::new(Granularity::Firm)),
                Some(ErrorLedger::new(Granularity::Analyst)),
            ),
        };
        BiasBook {
            mode: Some(mode.bias),
            primary,
            secondary,
        }
    }

    fn bias(&self, pair: &ErrorLedger, p: &PanelEstimate) -> f64 {
        let key = |l: &ErrorLedger| l.key(&p.identity, &p.estimate.broker_id, &p.estimate.firm_id);
        match (self.mode, &self.primary, &self.secondary) {
            (None, ..) => 0.0,
            (Some(BiasMode::Blend { firm_weight }), Some(firm), Some(analyst)) => blended_bias(
                firm.bias_at(&key(firm)),
                analyst.bias_at(&key(analyst)),
                firm_weight,
            ),
            (_, Some(l), _) => l.bias_at(&key(l)),
            _ => pair.bias_at(&key(pair)),
        }
    }

    fn record(&mut self, p: &PanelEstimate, err: Cents) {
        for l in [&mut self.primary, &mut self.secondary]
            .into_iter()
            .flatten()
        {
            let k = l.key(&p.identity, &p.estimate.broker_id, &p.estimate.firm_id);
            l.record(k, err);
        }
    }
}

struct Pending<'a> {
    estimate: &'a PanelEstimate,
    err: Cents,
    aae: f64,
    time: Timestamp,
}

/// Replays `panel` under `mode`.
pub fn replay(panel: &Panel, mode: &ModeConfig) -> Result<Replay> {
    mode.validate()?;
    let timeline = panel.timeline();
    let mut pair = ErrorLedger::new(Granularity::AnalystFirm);
    let mut book = BiasBook::new(mode);
    let mut accuracy = AccuracyLedger::default();
    let mut models: BTreeMap<Quarter, Result<PeriodModel, FitError>> = BTreeMap::new();
    let mut quarter_rows: Vec<NormalizedRow> = Vec::new();
    let mut current: Option<Quarter> = None;
    let mut outcomes = Vec::new();
    let mut features = Vec::new();
    let mut last_recorded: Option<Timestamp> = None;

    let close_quarter = |q: Quarter, rows: &mut Vec<NormalizedRow>, models: &mut BTreeMap<_, _>| {
        if !rows.is_empty() {
            models.insert(q, fit_period(q, rows, mode.mask));
        }
        rows.clear();
    };

    let mut start = 0;
    while start < timeline.len() {
        let t = timeline[start].announce_time;
        let end = timeline[start..]
            .iter()
            .position(|e| e.announce_time != t)
            .map_or(timeline.len(), |k| start + k);
        let q = Quarter::of_timestamp(t);
        debug_assert!(current.is_none_or(|c| c <= q), "timeline out of order");
        debug_assert!(
            last_recorded.is_none_or(|r| r < t),
            "ledger holds a non-prior record"
        );
        if current != Some(q) {
            if let Some(c) = current {
                close_quarter(c, &mut quarter_rows, &mut models);
            }
            current = Some(q);
        }
        let previous = match models.get(&q.prev()) {
            Some(Ok(m)) => PreviousModel::Fitted(m),
            Some(Err(_)) => PreviousModel::ModelLess,
            None => PreviousModel::Missing,
        };

        let mut pending: Vec<Pending> = Vec::new();
        for event in &timeline[start..end] {
            for p in event.all_estimates() {
                let err = signed_error(p.value(), event.actual);
                let bias = book.bias(&pair, p);
                pending.push(Pending {
                    estimate: p,
                    err,
                    aae: (err.as_f64() - bias).abs(),
                    time: event.announce_time,
                });
            }
            if !event.scored {
                continue;
            }
            let scored = score_event(event, mode, &pair, &book, &accuracy, previous)?;
            quarter_rows.extend(scored.traces.iter().map(|t| t.normalized));
            features.extend(scored.traces);
            outcomes.push(scored.outcome);
        }
        for p in pending {
            let e = p.estimate;
            pair.record(
                pair.key(&e.identity, &e.estimate.broker_id, &e.estimate.firm_id),
                p.err,
            );
            book.record(e, p.err);
            accuracy.record(&e.identity, &e.estimate.firm_id, p.aae);
            last_recorded = Some(last_recorded.map_or(p.time, |r| r.max(p.time)));
        }
        start = end;
    }
    if let Some(c) = current {
        close_quarter(c, &mut quarter_rows, &mut models);
    }

    Ok(Replay {
        events: outcomes,
        models: models
            .into_iter()
            .map(|(quarter, model)| ModelRecord { quarter, model })
            .collect(),
        features,
        pair_ledger: pair,
    })
}

struct Scored {
    outcome: EventOutcome,
    traces: Vec<FeatureTrace>,
}

fn score_event(
    event: &PanelEvent,
    mode: &ModeConfig,
    pair: &ErrorLedger,
    book: &BiasBook,
    accuracy: &AccuracyLedger,
    previous: PreviousModel<'_>,
) -> Result<Scored> {
    let mut raw_rows = Vec::with_capacity(event.estimates.len());
    let mut aae = Vec::with_capacity(event.estimates.len());
    let mut biases = Vec::with_capacity(event.estimates.len());
    for p in &event.estimates {
        let bias = book.bias(pair, p);
        let err = signed_error(p.value(), event.actual).as_f64();
        raw_rows.push(FeatureRow {
            age: p.age_days(event.announce_time),
            freq: p.freq,
            ncos: p.ncos,
            top10: p.top10,
            exp: pair.count(&pair.key(&p.identity, &p.estimate.broker_id, &event.firm_id)),
            mae: accuracy.mae(&p.identity, &event.firm_id)?,
        });
        aae.push((err - bias).abs());
        biases.push(bias);
    }
    let normalized = normalize_event(&raw_rows, &aae, mode.scaling);
    let inputs: Vec<AnalystInput> = event
        .estimates
        .iter()
        .zip(&biases)
        .zip(&normalized)
        .map(|((p, &bias), &features)| AnalystInput {
            raw: p.value(),
            bias,
            features,
        })
        .collect();

    let aggregate = match mode.estimator {
        Estimator::Weighted => improved_consensus(&inputs, mode, previous),
        Estimator::ClosestAnalyst => closest_aggregate(&inputs, mode, event.actual),
    };
    let traces = event
        .estimates
        .iter()
        .zip(raw_rows)
        .zip(aae)
        .zip(&normalized)
        .map(|(((p, raw), aae), n)| FeatureTrace {
            firm_id: event.firm_id.clone(),
            period: event.period,
            identity: p.identity.clone(),
            raw,
            aae,
            normalized: *n,
        })
        .collect();
    Ok(Scored {
        outcome: EventOutcome {
            firm_id: event.firm_id.clone(),
            period: event.period,
            announce_time: event.announce_time,
            actual: event.actual,
            identities: event.estimates.iter().map(|p| p.identity.clone()).collect(),
            aggregate,
        },
        traces,
    })
}

fn closest_aggregate(inputs: &[AnalystInput], mode: &ModeConfig, actual: Cents) -> EventAggregate {
    let raw: Vec<Cents> = inputs.iter().map(|a| a.raw).collect();
    let values: Vec<f64> = inputs
        .iter()
        .map(|a| {
            if mode.use_bias {
                a.raw.as_f64() - a.bias
            } else {
                a.raw.as_f64()
            }
        })
        .collect();
    let best = closest_index(&values, actual.as_f64()).unwrap_or(0);
    let mut weights = vec![0.0; inputs.len()];
    weights[best] = 1.0;
    EventAggregate {
        simple_consensus: simple_consensus(&raw).unwrap_or_default(),
        improved: values[best],
        weights,
        predicted: None,
        fallback: None,
    }
}
