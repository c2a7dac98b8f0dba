//! The ablation matrix: every mode replayed over its own panel and scored on
//! the events all modes share.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{BiasMode, Estimator, ModeConfig};
use crate::bias::Granularity;
use crate::calendar::Quarter;
use crate::error::{Error, Result};
use crate::evaluate::{summarize, ModeResult, SurprisePair};
use crate::features::{Scaling, Variable};
use crate::ingest::{build_panel, Actual, Estimate, EventKey, FilterConfig, Identity, Panel};
use crate::model::VariableMask;
use crate::replay::{replay, EventOutcome, Replay};

/// A mode with its stable short name and its display label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMode {
    pub name: String,
    pub label: String,
    pub config: ModeConfig,
}

impl NamedMode {
    fn new(name: &str, label: &str, config: ModeConfig) -> Self {
        NamedMode {
            name: name.into(),
            label: label.into(),
            config,
        }
    }

    pub fn is_full(&self) -> bool {
        self.name == FULL
    }
}

pub const FULL: &str = "full";
pub const BASELINE: &str = "baseline";

/// The ablation modes, full mode first.
pub fn ablation_modes() -> Vec<NamedMode> {
    let full = ModeConfig::default();
    let with = |f: &dyn Fn(&mut ModeConfig)| {
        let mut m = full.clone();
        f(&mut m);
        m
    };
    let without = |v: Variable| ModeConfig {
        mask: VariableMask::without(v),
        ..full.clone()
    };
    let keyed = |g| ModeConfig {
        bias: BiasMode::Keyed(g),
        ..full.clone()
    };
    vec![
        NamedMode::new(FULL, "Full mode", full.clone()),
        NamedMode::new(
            "no_expertise",
            "Without individual expertise",
            with(&|m| m.use_expertise = false),
        ),
        NamedMode::new(
            "no_bias",
            "Without individual bias",
            with(&|m| m.use_bias = false),
        ),
        NamedMode::new("no_age", "Without AGE", without(Variable::Age)),
        NamedMode::new("no_freq", "Without FREQ", without(Variable::Freq)),
        NamedMode::new("no_top10", "Without TOP10", without(Variable::Top10)),
        NamedMode::new("no_ncos", "Without NCOS", without(Variable::Ncos)),
        NamedMode::new("no_exp", "Without EXP", without(Variable::Exp)),
        NamedMode::new("no_mae", "Without MAE", without(Variable::Mae)),
        NamedMode::new(
            "no_scaling",
            "Without scaling of variables",
            with(&|m| m.scaling = Scaling::CenteredOnly),
        ),
        NamedMode::new("bias_general", "General bias", keyed(Granularity::Global)),
        NamedMode::new(
            "bias_firm",
            "Bias based on firm only",
            keyed(Granularity::Firm),
        ),
        NamedMode::new(
            "bias_analyst",
            "Bias based on analyst only",
            keyed(Granularity::Analyst),
        ),
        NamedMode::new(
            "bias_half",
            "Bias weighted half-firm, half-analyst",
            with(&|m| m.bias = BiasMode::Blend { firm_weight: 0.5 }),
        ),
        NamedMode::new(
            "institution",
            "Use institution instead of analyst id",
            with(&|m| m.identity = Identity::Broker),
        ),
        NamedMode::new("exponent_2", "Exponent r = 2", with(&|m| m.exponent = 2.0)),
        NamedMode::new(
            "cutoff_30",
            "Estimates up to 30 days before earnings",
            with(&|m| m.recency_cutoff_days = Some(30)),
        ),
        NamedMode::new(
            "cutoff_60",
            "Estimates up to 60 days before earnings",
            with(&|m| m.recency_cutoff_days = Some(60)),
        ),
        NamedMode::new(
            "closest",
            "Closest analyst",
            with(&|m| m.estimator = Estimator::ClosestAnalyst),
        ),
        NamedMode::new(
            "closest_no_bias",
            "Closest analyst without bias correction",
            with(&|m| {
                m.estimator = Estimator::ClosestAnalyst;
                m.use_bias = false;
            }),
        ),
    ]
}

/// Neither bias correction nor weighting: reproduces the simple consensus.
pub fn baseline_mode() -> NamedMode {
    NamedMode::new(
        BASELINE,
        "Without bias and expertise",
        ModeConfig {
            use_bias: false,
            use_expertise: false,
            ..ModeConfig::default()
        },
    )
}

/// Every known mode: the ablation modes plus the baseline.
pub fn all_modes() -> Vec<NamedMode> {
    let mut modes = ablation_modes();
    modes.push(baseline_mode());
    modes
}

/// Resolves a comma-separated selection; `all` selects the ablation modes.
pub fn select_modes(selection: &str) -> Result<Vec<NamedMode>> {
    let known = all_modes();
    let mut out = Vec::new();
    for name in selection
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        if name == "all" {
            out.extend(ablation_modes());
            continue;
        }
        let m = known
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("unknown mode `{name}`")))?;
        out.push(m.clone());
    }
    if out.is_empty() {
        return Err(Error::Config("no modes selected".into()));
    }
    let mut seen = BTreeSet::new();
    out.retain(|m| seen.insert(m.name.clone()));
    Ok(out)
}

pub struct MatrixInput<'a> {
    pub estimates: &'a [Estimate],
    /// Cross-checked actuals.
    pub actuals: &'a [Actual],
    pub filter: &'a FilterConfig,
    /// Leading calendar quarters that only accumulate history.
    pub burn_in_quarters: u32,
}

pub struct ModeRun {
    pub mode: NamedMode,
    pub replay: Replay,
    /// Indices into `replay.events` of the common evaluation set.
    pub evaluated: Vec<usize>,
    pub result: ModeResult,
}

impl ModeRun {
    pub fn evaluated_events(&self) -> impl Iterator<Item = &EventOutcome> {
        self.evaluated.iter().map(|&i| &self.replay.events[i])
    }

    pub fn pairs(&self) -> Vec<SurprisePair> {
        self.evaluated_events()
            .map(EventOutcome::surprise)
            .collect()
    }
}

pub struct MatrixOutput {
    pub first_quarter: Quarter,
    base_key: (Identity, i64),
    pub evaluation_start: Quarter,
    /// Panels keyed by (identity, min lead hours).
    pub panels: BTreeMap<(Identity, i64), Panel>,
    pub runs: Vec<ModeRun>,
}

impl MatrixOutput {
    /// The panel built with the unmodified filter configuration.
    pub fn base_panel(&self) -> &Panel {
        &self.panels[&self.base_key]
    }

    pub fn results(&self) -> Vec<ModeResult> {
        self.runs.iter().map(|r| r.result.clone()).collect()
    }
}

/// The filter a mode's panel is built with.
pub fn mode_filter(base: &FilterConfig, mode: &ModeConfig) -> FilterConfig {
    FilterConfig {
        identity: mode.identity,
        min_lead_hours: mode
            .recency_cutoff_days
            .map_or(base.min_lead_hours, |d| d * 24),
        ..base.clone()
    }
}

/// Replays each mode and scores all of them on the same events: those in
/// the evaluation window that every mode's panel kept.
pub fn run_mode_matrix(input: &MatrixInput<'_>, modes: &[NamedMode]) -> Result<MatrixOutput> {
    if input.burn_in_quarters < 1 {
        return Err(Error::Config("burn-in must be at least one quarter".into()));
    }
    for m in modes {
        m.config.validate()?;
    }
    let first_quarter = input
        .actuals
        .iter()
        .map(|a| Quarter::of_timestamp(a.announce_time))
        .min()
        .ok_or(Error::Empty("no actuals"))?;
    let evaluation_start = first_quarter.offset(input.burn_in_quarters as i64);

    let base_key = (input.filter.identity, input.filter.min_lead_hours);
    let mut filters: BTreeMap<(Identity, i64), FilterConfig> = BTreeMap::new();
    filters.insert(base_key, input.filter.clone());
    for m in modes {
        let f = mode_filter(input.filter, &m.config);
        filters.entry((f.identity, f.min_lead_hours)).or_insert(f);
    }
    let panels: BTreeMap<(Identity, i64), Panel> = filters
        .into_par_iter()
        .map(|(k, f)| (k, build_panel(input.estimates, input.actuals, &f)))
        .collect();

    let replays: Vec<Replay> = modes
        .par_iter()
        .map(|m| {
            let f = mode_filter(input.filter, &m.config);
            replay(&panels[&(f.identity, f.min_lead_hours)], &m.config)
        })
        .collect::<Result<_>>()?;

    let mut common: Option<BTreeSet<EventKey>> = None;
    for r in &replays {
        let keys: BTreeSet<EventKey> = r
            .events
            .iter()
            .filter(|e| e.quarter() >= evaluation_start)
            .map(EventOutcome::key)
            .collect();
        common = Some(match common {
            None => keys,
            Some(c) => c.intersection(&keys).cloned().collect(),
        });
    }
    let common = common.unwrap_or_default();
    if common.is_empty() {
        return Err(Error::Empty(
            "no events in the evaluation window common to all modes",
        ));
    }

    let runs = modes
        .iter()
        .zip(replays)
        .map(|(mode, replay)| {
            let evaluated: Vec<usize> = replay
                .events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.quarter() >= evaluation_start && common.contains(&e.key()))
                .map(|(i, _)| i)
                .collect();
            let pairs: Vec<SurprisePair> = evaluated
                .iter()
                .map(|&i| replay.events[i].surprise())
                .collect();
            let result = summarize(&mode.name, &mode.label, &pairs, mode.is_full());
            ModeRun {
                mode: mode.clone(),
                replay,
                evaluated,
                result,
            }
        })
        .collect();

    Ok(MatrixOutput {
        first_quarter,
        base_key,
        evaluation_start,
        panels,
        runs,
    })
}
