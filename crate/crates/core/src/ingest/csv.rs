//! Delimited-text readers for the estimate and actual files.
//!
//! Malformed rows never abort a parse: each one lands in the reject log with
//! its line number and a reason. Only a missing or unreadable header is fatal.

use std::io::Read;

use csv::{ReaderBuilder, StringRecord};
use serde::Serialize;

use crate::calendar::{parse_timestamp, Quarter, Timestamp};
use crate::error::{Error, Result};
use crate::money::Cents;

use super::{Actual, Estimate};

/// One rejected input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub rejects: Vec<Reject>,
}

impl<T> Parsed<T> {
    pub fn rows(&self) -> usize {
        self.records.len() + self.rejects.len()
    }
}

/// Column names for the estimates file.
#[derive(Debug, Clone)]
pub struct EstimateColumns {
    pub analyst_id: String,
    pub broker_id: String,
    pub firm_id: String,
    pub period_year: String,
    pub period_quarter: String,
    pub estimate_ts: String,
    pub horizon_code: String,
    pub value_cents: String,
}

impl Default for EstimateColumns {
    fn default() -> Self {
        EstimateColumns {
            analyst_id: "analyst_id".into(),
            broker_id: "broker_id".into(),
            firm_id: "firm_id".into(),
            period_year: "period_year".into(),
            period_quarter: "period_quarter".into(),
            estimate_ts: "estimate_ts".into(),
            horizon_code: "horizon_code".into(),
            value_cents: "value_cents".into(),
        }
    }
}

/// Column names for the actuals (and actuals-check) files.
#[derive(Debug, Clone)]
pub struct ActualColumns {
    pub firm_id: String,
    pub period_year: String,
    pub period_quarter: String,
    pub announce_ts: String,
    pub value_cents: String,
}

impl Default for ActualColumns {
    fn default() -> Self {
        ActualColumns {
            firm_id: "firm_id".into(),
            period_year: "period_year".into(),
            period_quarter: "period_quarter".into(),
            announce_ts: "announce_ts".into(),
            value_cents: "value_cents".into(),
        }
    }
}

pub const ESTIMATE_HEADER: [&str; 8] = [
    "analyst_id",
    "broker_id",
    "firm_id",
    "period_year",
    "period_quarter",
    "estimate_ts",
    "horizon_code",
    "value_cents",
];

pub const ACTUAL_HEADER: [&str; 5] = [
    "firm_id",
    "period_year",
    "period_quarter",
    "announce_ts",
    "value_cents",
];

struct Columns {
    index: Vec<usize>,
}

impl Columns {
    fn resolve(header: &StringRecord, names: &[&str], input: &str) -> Result<Columns> {
        let index = names
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h.trim() == *name)
                    .ok_or_else(|| Error::Header {
                        input: input.to_string(),
                        reason: format!("missing column `{name}`"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Columns { index })
    }

    fn field<'r>(&self, record: &'r StringRecord, k: usize, name: &str) -> Result<&'r str, String> {
        match record.get(self.index[k]).map(str::trim) {
            Some("") | None => Err(format!("missing {name}")),
            Some(v) => Ok(v),
        }
    }
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(source)
}

fn header<R: Read>(rdr: &mut csv::Reader<R>, input: &str) -> Result<StringRecord> {
    let header = rdr.headers().map_err(|e| Error::Header {
        input: input.to_string(),
        reason: e.to_string(),
    })?;
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::Header {
            input: input.to_string(),
            reason: "empty header".into(),
        });
    }
    Ok(header.clone())
}

fn parse_int<T: std::str::FromStr>(v: &str, name: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid {name} `{v}`"))
}

fn parse_quarter(year: &str, quarter: &str) -> Result<Quarter, String> {
    let y: i32 = parse_int(year, "period_year")?;
    let q: u8 = parse_int(quarter, "period_quarter")?;
    Quarter::new(y, q).ok_or_else(|| format!("period_quarter out of range `{quarter}`"))
}

fn parse_ts(v: &str, name: &str) -> Result<Timestamp, String> {
    parse_timestamp(v).ok_or_else(|| format!("invalid {name} `{v}`"))
}

fn drive<R: Read, T>(
    source: R,
    input: &str,
    names: &[&str],
    mut row: impl FnMut(&Columns, &StringRecord) -> Result<T, String>,
) -> Result<Parsed<T>> {
    let mut rdr = reader(source);
    let header = header(&mut rdr, input)?;
    let columns = Columns::resolve(&header, names, input)?;
    let mut out = Parsed {
        records: Vec::new(),
        rejects: Vec::new(),
    };
    let mut record = StringRecord::new();
    loop {
        let line = rdr.position().line() + 1;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(line, |p| p.line());
                if record.iter().all(|f| f.trim().is_empty()) {
                    continue;
                }
                match row(&columns, &record) {
                    Ok(r) => out.records.push(r),
                    Err(reason) => out.rejects.push(Reject { line, reason }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(line, |p| p.line());
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(e.into());
                }
                out.rejects.push(Reject {
                    line,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Reads an estimates file. `input` names the source in diagnostics.
pub fn parse_estimates<R: Read>(
    source: R,
    schema: &EstimateColumns,
    input: &str,
) -> Result<Parsed<Estimate>> {
    let names = [
        schema.analyst_id.as_str(),
        &schema.broker_id,
        &schema.firm_id,
        &schema.period_year,
        &schema.period_quarter,
        &schema.estimate_ts,
        &schema.horizon_code,
        &schema.value_cents,
    ];
    drive(source, input, &names, |cols, rec| {
        let f = |k: usize| cols.field(rec, k, ESTIMATE_HEADER[k]);
        Ok(Estimate {
            analyst_id: f(0)?.to_string(),
            broker_id: f(1)?.to_string(),
            firm_id: f(2)?.to_string(),
            period: parse_quarter(f(3)?, f(4)?)?,
            estimate_time: parse_ts(f(5)?, "estimate_ts")?,
            horizon_code: parse_int(f(6)?, "horizon_code")?,
            value: Cents(parse_int(f(7)?, "value_cents")?),
        })
    })
}

/// Reads an actuals file (primary or check source; same schema).
pub fn parse_actuals<R: Read>(
    source: R,
    schema: &ActualColumns,
    input: &str,
) -> Result<Parsed<Actual>> {
    let names = [
        schema.firm_id.as_str(),
        &schema.period_year,
        &schema.period_quarter,
        &schema.announce_ts,
        &schema.value_cents,
    ];
    drive(source, input, &names, |cols, rec| {
        let f = |k: usize| cols.field(rec, k, ACTUAL_HEADER[k]);
        Ok(Actual {
            firm_id: f(0)?.to_string(),
            period: parse_quarter(f(1)?, f(2)?)?,
            announce_time: parse_ts(f(3)?, "announce_ts")?,
            value: Cents(parse_int(f(4)?, "value_cents")?),
        })
    })
}

/// Renders estimates in the canonical column order.
pub fn write_estimates<W: std::io::Write>(sink: W, estimates: &[Estimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(ESTIMATE_HEADER)?;
    for e in estimates {
        w.write_record([
            e.analyst_id.clone(),
            e.broker_id.clone(),
            e.firm_id.clone(),
            e.period.year.to_string(),
            e.period.quarter.to_string(),
            crate::calendar::format_timestamp(e.estimate_time),
            e.horizon_code.to_string(),
            e.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<estimates>", e))?;
    Ok(())
}

pub fn write_actuals<W: std::io::Write>(sink: W, actuals: &[Actual]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(ACTUAL_HEADER)?;
    for a in actuals {
        w.write_record([
            a.firm_id.clone(),
            a.period.year.to_string(),
            a.period.quarter.to_string(),
            crate::calendar::format_timestamp(a.announce_time),
            a.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<actuals>", e))?;
    Ok(())
}
