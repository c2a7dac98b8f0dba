//! Estimate/actual ingestion and the exclusion rules that turn raw rows into
//! a chronological panel of announcement events.

mod csv;
mod panel;

use serde::{Deserialize, Serialize};

use crate::calendar::{Quarter, Timestamp};
use crate::money::Cents;

pub use self::csv::{
    parse_actuals, parse_estimates, write_actuals, write_estimates, ActualColumns, EstimateColumns,
    Parsed, Reject, ACTUAL_HEADER, ESTIMATE_HEADER,
};
pub use self::panel::{
    build_panel, cross_check_actuals, ActualsReport, EventCounts, IngestReport, Panel,
    PanelEstimate, PanelEvent, RejectReason,
};

/// One expert's timestamped point prediction for one firm-period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Estimate {
    pub analyst_id: String,
    pub broker_id: String,
    pub firm_id: String,
    pub period: Quarter,
    pub estimate_time: Timestamp,
    pub horizon_code: i32,
    pub value: Cents,
}

/// The realized outcome for a firm-period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actual {
    pub firm_id: String,
    pub period: Quarter,
    pub announce_time: Timestamp,
    pub value: Cents,
}

/// Identifies an announcement: firm plus fiscal period.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventKey {
    pub firm_id: String,
    pub period: Quarter,
}

impl Actual {
    pub fn key(&self) -> EventKey {
        EventKey {
            firm_id: self.firm_id.clone(),
            period: self.period,
        }
    }
}

/// Whose history a prediction is attributed to.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    #[default]
    Analyst,
    /// Brokerage substituted for the analyst everywhere (bias, EXP, MAE, FREQ, dedup).
    Broker,
}

impl Identity {
    pub fn of<'e>(&self, estimate: &'e Estimate) -> &'e str {
        match self {
            Identity::Analyst => &estimate.analyst_id,
            Identity::Broker => &estimate.broker_id,
        }
    }
}

/// Exclusion rule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Events whose simple-consensus surprise exceeds this are discarded.
    pub surprise_cap: Cents,
    /// Empty means every horizon code is accepted.
    pub allowed_horizons: Vec<i32>,
    pub max_age_days: i64,
    pub min_lead_hours: i64,
    pub min_analysts: usize,
    pub identity: Identity,
    /// Keep primary actuals that have no counterpart in the check source.
    pub keep_unchecked: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            surprise_cap: Cents(50),
            allowed_horizons: vec![6, 7, 8, 9],
            max_age_days: 365,
            min_lead_hours: 48,
            min_analysts: 8,
            identity: Identity::Analyst,
            keep_unchecked: false,
        }
    }
}

impl FilterConfig {
    pub fn horizon_allowed(&self, code: i32) -> bool {
        self.allowed_horizons.is_empty() || self.allowed_horizons.contains(&code)
    }
}
