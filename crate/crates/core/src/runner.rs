//! End-to-end runs: read inputs, run the mode matrix, write artifacts.
//!
//! Every artifact is rendered in memory first and written only once the
//! whole run has succeeded. Formatting is a pure function of the inputs and
//! the configuration, so a run repeated from its manifest reproduces
//! `results.csv` byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::DEFAULT_EXPONENT;
use crate::calendar::{format_timestamp, parse_timestamp, Quarter};
use crate::config::{parse_bool, parse_value, Settable};
use crate::error::{Error, Result};
use crate::evaluate::{descriptive_stats, summarize, trend_stat, ModeResult, SurprisePair, Trend};
use crate::features::Variable;
use crate::ingest::{
    cross_check_actuals, parse_actuals, parse_estimates, ActualColumns, EstimateColumns,
    FilterConfig, Identity, IngestReport, Reject,
};
use crate::matrix::{
    all_modes, run_mode_matrix, select_modes, MatrixInput, MatrixOutput, NamedMode, FULL,
};
use crate::money::Cents;

pub const RESULTS_FILE: &str = "results.csv";
pub const MODELS_FILE: &str = "models.csv";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const REJECTS_FILE: &str = "rejects.csv";
pub const DESCRIPTIVE_FILE: &str = "descriptive_stats.json";
pub const LEDGER_FILE: &str = "bias_ledger.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_BURN_IN: u32 = 24;

pub fn scatter_file(mode: &str) -> String {
    format!("scatter_{mode}.csv")
}

/// Sidecar of a scatter file with the fitted trend line.
pub fn trend_file(mode: &str) -> String {
    format!("scatter_{mode}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub estimates: PathBuf,
    pub actuals: PathBuf,
    /// Second actuals source; see [`FilterConfig::keep_unchecked`].
    pub actuals_check: Option<PathBuf>,
    pub out: PathBuf,
    pub filter: FilterConfig,
    pub burn_in_quarters: u32,
    /// Comma-separated mode names, or `all`.
    pub modes: String,
    /// Replaces the default weight exponent in every mode that uses it.
    pub exponent: Option<f64>,
    /// Seed of the generator that produced the inputs, if any. Recorded only.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            estimates: PathBuf::new(),
            actuals: PathBuf::new(),
            actuals_check: None,
            out: PathBuf::from("out"),
            filter: FilterConfig::default(),
            burn_in_quarters: DEFAULT_BURN_IN,
            modes: "all".into(),
            exponent: None,
            seed: None,
        }
    }
}

impl Settable for RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.filter;
        match key {
            "estimates" => self.estimates = value.into(),
            "actuals" => self.actuals = value.into(),
            "actuals_check" => self.actuals_check = Some(value.into()),
            "out" => self.out = value.into(),
            "modes" => self.modes = value.into(),
            "burn_in" => self.burn_in_quarters = parse_value(key, value)?,
            "exponent" => self.exponent = Some(parse_value(key, value)?),
            "seed" => self.seed = Some(parse_value(key, value)?),
            "min_analysts" => f.min_analysts = parse_value(key, value)?,
            "surprise_cap_cents" => f.surprise_cap = Cents(parse_value(key, value)?),
            "min_lead_hours" => f.min_lead_hours = parse_value(key, value)?,
            "max_age_days" => f.max_age_days = parse_value(key, value)?,
            "keep_unchecked" => f.keep_unchecked = parse_bool(key, value)?,
            "identity" => {
                f.identity = match value.trim() {
                    "analyst" => Identity::Analyst,
                    "broker" => Identity::Broker,
                    _ => return Err(Error::Config(format!("invalid identity {value:?}"))),
                }
            }
            "horizons" => {
                f.allowed_horizons = if value.trim() == "all" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|c| parse_value(key, c))
                        .collect::<Result<_>>()?
                }
            }
            _ => return Err(Error::Config(format!("unknown run setting `{key}`"))),
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.estimates.as_os_str().is_empty() || self.actuals.as_os_str().is_empty() {
            return Err(Error::Config(
                "estimates and actuals paths are required".into(),
            ));
        }
        if self.burn_in_quarters < 1 {
            return Err(Error::Config("burn-in must be at least one quarter".into()));
        }
        if let Some(r) = self.exponent {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("exponent must be positive, got {r}")));
            }
        }
        if self.filter.min_analysts == 0 {
            return Err(Error::Config("min_analysts must be positive".into()));
        }
        Ok(())
    }

    /// Selected modes in registry order, with the exponent override applied.
    pub fn resolved_modes(&self) -> Result<Vec<NamedMode>> {
        let mut modes = select_modes(&self.modes)?;
        if let Some(r) = self.exponent {
            for m in &mut modes {
                if m.config.exponent == DEFAULT_EXPONENT {
                    m.config.exponent = r;
                }
            }
        }
        modes.sort_by_key(|m| registry_rank(&m.name));
        Ok(modes)
    }
}

fn registry_rank(name: &str) -> usize {
    all_modes()
        .iter()
        .position(|m| m.name == name)
        .unwrap_or(usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl InputDigest {
    fn of(path: &Path, data: &[u8]) -> Self {
        InputDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(data)),
            bytes: data.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub estimates: InputDigest,
    pub actuals: InputDigest,
    pub actuals_check: Option<InputDigest>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }

    /// Fails if any recorded input no longer has its recorded content.
    pub fn verify_inputs(&self) -> Result<()> {
        let digests = [
            Some(&self.estimates),
            Some(&self.actuals),
            self.actuals_check.as_ref(),
        ];
        for d in digests.into_iter().flatten() {
            let data = fs::read(&d.path).map_err(|e| Error::io(&d.path, e))?;
            if InputDigest::of(&d.path, &data) != *d {
                return Err(Error::ManifestMismatch {
                    path: d.path.clone(),
                });
            }
        }
        Ok(())
    }
}

/// What a successful run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub files: Vec<String>,
    pub results: Vec<ModeResult>,
    pub report: IngestReport,
}

/// Everything the pipeline computes for one configuration, before writing.
pub struct Analysis {
    pub manifest: Manifest,
    pub matrix: MatrixOutput,
    pub report: IngestReport,
    pub rejects: Vec<(String, Reject)>,
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads the inputs and runs every selected mode.
pub fn analyze(cfg: &RunConfig) -> Result<Analysis> {
    cfg.validate()?;
    let modes = cfg.resolved_modes()?;

    let est_bytes = read_input(&cfg.estimates)?;
    let act_bytes = read_input(&cfg.actuals)?;
    let check_bytes = cfg.actuals_check.as_deref().map(read_input).transpose()?;

    let input = |p: &Path| p.display().to_string();
    let estimates = parse_estimates(
        est_bytes.as_slice(),
        &EstimateColumns::default(),
        &input(&cfg.estimates),
    )?;
    let actuals = parse_actuals(
        act_bytes.as_slice(),
        &ActualColumns::default(),
        &input(&cfg.actuals),
    )?;
    let check = match (&check_bytes, &cfg.actuals_check) {
        (Some(b), Some(p)) => Some(parse_actuals(
            b.as_slice(),
            &ActualColumns::default(),
            &input(p),
        )?),
        _ => None,
    };
    info!(
        "parsed {} estimates ({} rejected), {} actuals ({} rejected)",
        estimates.records.len(),
        estimates.rejects.len(),
        actuals.records.len(),
        actuals.rejects.len()
    );

    let mut rejects: Vec<(String, Reject)> = Vec::new();
    rejects.extend(
        estimates
            .rejects
            .iter()
            .map(|r| ("estimates".to_string(), r.clone())),
    );
    rejects.extend(
        actuals
            .rejects
            .iter()
            .map(|r| ("actuals".to_string(), r.clone())),
    );
    if let Some(c) = &check {
        rejects.extend(
            c.rejects
                .iter()
                .map(|r| ("actuals_check".to_string(), r.clone())),
        );
    }

    let (kept_actuals, actuals_report) = cross_check_actuals(
        &actuals.records,
        check.as_ref().map(|c| c.records.as_slice()),
        cfg.filter.keep_unchecked,
    );
    if actuals_report.mismatched > 0 || actuals_report.duplicates > 0 {
        warn!(
            "actuals: {} mismatched, {} duplicated keys dropped",
            actuals_report.mismatched, actuals_report.duplicates
        );
    }

    let matrix = run_mode_matrix(
        &MatrixInput {
            estimates: &estimates.records,
            actuals: &kept_actuals,
            filter: &cfg.filter,
            burn_in_quarters: cfg.burn_in_quarters,
        },
        &modes,
    )?;

    let mut report = matrix.base_panel().report.clone();
    report.actuals = Some(actuals_report);
    report
        .parse_rejects
        .insert("estimates".into(), estimates.rejects.len());
    report
        .parse_rejects
        .insert("actuals".into(), actuals.rejects.len());
    if let Some(c) = &check {
        report
            .parse_rejects
            .insert("actuals_check".into(), c.rejects.len());
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        estimates: InputDigest::of(&cfg.estimates, &est_bytes),
        actuals: InputDigest::of(&cfg.actuals, &act_bytes),
        actuals_check: match (&check_bytes, &cfg.actuals_check) {
            (Some(b), Some(p)) => Some(InputDigest::of(p, b)),
            _ => None,
        },
    };
    Ok(Analysis {
        manifest,
        matrix,
        report,
        rejects,
    })
}

/// One evaluated event of a `scatter_<mode>.csv` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub firm_id: String,
    pub period: String,
    pub announce_ts: String,
    pub actual: i64,
    pub simple_consensus: f64,
    pub improved: f64,
    /// simple_consensus - actual
    pub original_surprise: f64,
    /// improved - actual
    pub improved_surprise: f64,
    pub n_analysts: usize,
    pub fallback_reason: String,
}

impl EventRow {
    pub fn surprise(&self) -> SurprisePair {
        let a = self.actual as f64;
        SurprisePair::new(self.simple_consensus - a, self.improved - a)
    }
}

#[derive(Debug, Serialize)]
struct ResultRow<'a> {
    mode: &'a str,
    label: &'a str,
    statistic: &'static str,
    value: Option<f64>,
    n_events: usize,
    supplementary: bool,
}

#[derive(Debug, Serialize)]
struct TrendSidecar<'a> {
    mode: &'a str,
    n_events: usize,
    supplementary: bool,
    trend: Option<Trend>,
}

fn csv_bytes<S: Serialize>(rows: impl IntoIterator<Item = S>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Internal(format!("csv buffer: {e}")))
}

fn json_bytes<S: Serialize>(value: &S) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    Ok(buf)
}

/// One row per mode and statistic.
pub fn render_results(results: &[ModeResult]) -> Result<Vec<u8>> {
    csv_bytes(results.iter().flat_map(|r| {
        let row = |statistic, value, supplementary| ResultRow {
            mode: &r.name,
            label: &r.label,
            statistic,
            value,
            n_events: r.n_events,
            supplementary,
        };
        [
            row("median", r.median_stat, false),
            row("average", r.average_stat, false),
            row("trend", r.trend_stat, r.trend_supplementary),
        ]
    }))
}

fn header_only(columns: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns)?;
    w.into_inner()
        .map_err(|e| Error::Internal(format!("csv buffer: {e}")))
}

fn render_models(matrix: &MatrixOutput) -> Result<Vec<u8>> {
    let mut header = vec![
        "mode".to_string(),
        "quarter".into(),
        "status".into(),
        "n_obs".into(),
    ];
    header.extend(
        Variable::ALL
            .iter()
            .map(|v| format!("beta_{}", v.name().to_ascii_lowercase())),
    );
    header.push("rss".into());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for run in &matrix.runs {
        for rec in &run.replay.models {
            let mut row = vec![run.mode.name.clone(), rec.quarter.to_string()];
            match &rec.model {
                Ok(m) => {
                    row.push("fitted".into());
                    row.push(m.n_obs.to_string());
                    row.extend(m.beta.iter().map(|b| b.to_string()));
                    row.push(m.rss.to_string());
                }
                Err(e) => {
                    row.push(e.to_string());
                    row.extend(std::iter::repeat_n(String::new(), Variable::ALL.len() + 2));
                }
            }
            w.write_record(&row)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::Internal(format!("csv buffer: {e}")))
}

/// Renders every artifact of an analysis, in write order.
pub fn render(analysis: &Analysis) -> Result<Vec<(String, Vec<u8>)>> {
    let matrix = &analysis.matrix;
    let mut files = Vec::new();
    files.push((RESULTS_FILE.to_string(), render_results(&matrix.results())?));

    for run in &matrix.runs {
        let rows: Vec<EventRow> = run
            .evaluated_events()
            .map(|e| {
                let s = e.surprise();
                EventRow {
                    firm_id: e.firm_id.clone(),
                    period: e.period.to_string(),
                    announce_ts: format_timestamp(e.announce_time),
                    actual: e.actual.0,
                    simple_consensus: e.aggregate.simple_consensus,
                    improved: e.aggregate.improved,
                    original_surprise: s.original,
                    improved_surprise: s.improved,
                    n_analysts: e.n_analysts(),
                    fallback_reason: e.aggregate.fallback.map_or("", |f| f.as_str()).to_string(),
                }
            })
            .collect();
        files.push((scatter_file(&run.mode.name), csv_bytes(rows)?));
        let sidecar = TrendSidecar {
            mode: &run.mode.name,
            n_events: run.result.n_events,
            supplementary: run.result.trend_supplementary,
            trend: trend_stat(&run.pairs()),
        };
        files.push((trend_file(&run.mode.name), json_bytes(&sidecar)?));
    }

    files.push((MODELS_FILE.to_string(), render_models(matrix)?));
    files.push((
        INGEST_REPORT_FILE.to_string(),
        json_bytes(&analysis.report)?,
    ));

    #[derive(Serialize)]
    struct RejectRow<'a> {
        file: &'a str,
        line: u64,
        reason: &'a str,
    }
    let rejects = if analysis.rejects.is_empty() {
        header_only(&["file", "line", "reason"])?
    } else {
        csv_bytes(analysis.rejects.iter().map(|(f, r)| RejectRow {
            file: f,
            line: r.line,
            reason: &r.reason,
        }))?
    };
    files.push((REJECTS_FILE.to_string(), rejects));

    let base = matrix.base_panel();
    files.push((
        DESCRIPTIVE_FILE.to_string(),
        json_bytes(&descriptive_stats(base.events())?)?,
    ));

    if let Some(run) = matrix
        .runs
        .iter()
        .find(|r| r.mode.name == FULL)
        .or(matrix.runs.first())
    {
        #[derive(Serialize)]
        struct LedgerRow<'a> {
            mode: &'a str,
            who: &'a str,
            firm: &'a str,
            count: u32,
            mean_bias: f64,
        }
        let snapshot = run.replay.pair_ledger.snapshot();
        let bytes = if snapshot.is_empty() {
            header_only(&["mode", "who", "firm", "count", "mean_bias"])?
        } else {
            csv_bytes(snapshot.iter().map(|e| LedgerRow {
                mode: &run.mode.name,
                who: &e.who,
                firm: &e.firm,
                count: e.count,
                mean_bias: e.mean_bias,
            }))?
        };
        files.push((LEDGER_FILE.to_string(), bytes));
    }

    files.push((MANIFEST_FILE.to_string(), json_bytes(&analysis.manifest)?));
    Ok(files)
}

/// Writes `files` into `dir`. On any failure the files written so far are
/// removed again.
pub fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        let res = fs::File::create(&path).and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        });
        if let Err(e) = res {
            for p in written.iter().chain(std::iter::once(&path)) {
                let _ = fs::remove_file(p);
            }
            return Err(Error::io(&path, e));
        }
        written.push(path);
    }
    Ok(files.iter().map(|(n, _)| n.clone()).collect())
}

pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let analysis = analyze(cfg)?;
    let files = render(&analysis)?;
    let names = write_all(&cfg.out, &files)?;
    info!("wrote {} files to {}", names.len(), cfg.out.display());
    Ok(RunSummary {
        out: cfg.out.clone(),
        files: names,
        results: analysis.matrix.results(),
        report: analysis.report,
    })
}

/// Repeats the run recorded in a manifest, optionally into another directory.
pub fn run_from_manifest(path: &Path, out: Option<&Path>) -> Result<RunSummary> {
    let manifest = Manifest::read(path)?;
    manifest.verify_inputs()?;
    let mut cfg = manifest.config;
    if let Some(o) = out {
        cfg.out = o.to_path_buf();
    }
    run(&cfg)
}

/// Re-derives `results.csv` from the `scatter_<mode>.csv` files in `dir`
/// and rewrites it. Returns the recomputed rows.
pub fn report(dir: &Path) -> Result<Vec<ModeResult>> {
    let mut found: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(mode) = name
            .strip_prefix("scatter_")
            .and_then(|s| s.strip_suffix(".csv"))
        {
            found.push((mode.to_string(), entry.path()));
        }
    }
    if found.is_empty() {
        return Err(Error::Empty("no scatter_<mode>.csv files"));
    }
    found.sort_by(|a, b| (registry_rank(&a.0), &a.0).cmp(&(registry_rank(&b.0), &b.0)));

    let registry = all_modes();
    let mut results = Vec::new();
    for (mode, path) in found {
        let data = read_input(&path)?;
        let mut reader = csv::Reader::from_reader(data.as_slice());
        let mut pairs = Vec::new();
        for row in reader.deserialize::<EventRow>() {
            let row = row?;
            if row.period.parse::<Quarter>().is_err() || parse_timestamp(&row.announce_ts).is_none()
            {
                return Err(Error::Header {
                    input: path.display().to_string(),
                    reason: format!("malformed event row for {}", row.firm_id),
                });
            }
            pairs.push(row.surprise());
        }
        let label = registry
            .iter()
            .find(|m| m.name == mode)
            .map_or(mode.clone(), |m| m.label.clone());
        results.push(summarize(&mode, &label, &pairs, mode == FULL));
    }
    write_all(
        dir,
        &[(RESULTS_FILE.to_string(), render_results(&results)?)],
    )?;
    Ok(results)
}
