//! Per-key signed-error history and the bias it implies.
//!
//! Sums are kept in integer cents next to the count so that the running
//! state after any prefix is exactly the batch state over that prefix;
//! division happens only when a bias is queried.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::money::Cents;

/// ERR = PREDICT - ACTUAL.
pub fn signed_error(predict: Cents, actual: Cents) -> Cents {
    predict - actual
}

/// lambda * firm_bias + (1 - lambda) * analyst_bias.
pub fn blended_bias(firm_bias: f64, analyst_bias: f64, lambda: f64) -> f64 {
    lambda * firm_bias + (1.0 - lambda) * analyst_bias
}

/// The grouping a ledger accumulates errors under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    AnalystFirm,
    Analyst,
    Firm,
    Global,
    BrokerFirm,
}

/// Ledger key. Unused components are empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LedgerKey {
    pub who: String,
    pub firm: String,
}

impl Granularity {
    /// `identity` is whoever predictions are attributed to (analyst or broker).
    pub fn key(self, identity: &str, broker: &str, firm: &str) -> LedgerKey {
        let (who, firm) = match self {
            Granularity::AnalystFirm => (identity, firm),
            Granularity::Analyst => (identity, ""),
            Granularity::Firm => ("", firm),
            Granularity::Global => ("", ""),
            Granularity::BrokerFirm => (broker, firm),
        };
        LedgerKey {
            who: who.to_string(),
            firm: firm.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub sum: i64,
    pub count: u32,
}

impl Tally {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum as f64 / self.count as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErrorLedger {
    granularity: Granularity,
    entries: HashMap<LedgerKey, Tally>,
}

/// Diagnostic row of a ledger snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub who: String,
    pub firm: String,
    pub count: u32,
    pub mean_bias: f64,
}

impl ErrorLedger {
    pub fn new(granularity: Granularity) -> Self {
        ErrorLedger {
            granularity,
            entries: HashMap::new(),
        }
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn key(&self, identity: &str, broker: &str, firm: &str) -> LedgerKey {
        self.granularity.key(identity, broker, firm)
    }

    /// Mean recorded error under `key`; 0 without history.
    pub fn bias_at(&self, key: &LedgerKey) -> f64 {
        self.tally(key).mean()
    }

    pub fn count(&self, key: &LedgerKey) -> u32 {
        self.tally(key).count
    }

    pub fn tally(&self, key: &LedgerKey) -> Tally {
        self.entries.get(key).copied().unwrap_or_default()
    }

    pub fn record(&mut self, key: LedgerKey, err: Cents) {
        let t = self.entries.entry(key).or_default();
        t.sum += err.0;
        t.count += 1;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by key.
    pub fn snapshot(&self) -> Vec<LedgerEntry> {
        let mut rows: Vec<_> = self
            .entries
            .iter()
            .map(|(k, t)| LedgerEntry {
                who: k.who.clone(),
                firm: k.firm.clone(),
                count: t.count,
                mean_bias: t.mean(),
            })
            .collect();
        rows.sort_by(|a, b| (&a.who, &a.firm).cmp(&(&b.who, &b.firm)));
        rows
    }
}
