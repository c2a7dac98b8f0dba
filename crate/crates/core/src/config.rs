//! `key = value` configuration files.
//!
//! Keys are the long flag names with `-` or `_` as separator. Blank lines
//! and lines starting with `#` are skipped. Later sources override earlier
//! ones, so callers apply the file first and explicit flags after.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed pairs in key order. Keys are normalized to `snake_case`.
pub type Pairs = BTreeMap<String, String>;

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

pub fn parse_pairs(text: &str) -> Result<Pairs> {
    let mut out = Pairs::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value",
                i + 1
            )));
        };
        let key = normalize_key(k);
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key {key}",
                i + 1
            )));
        }
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Pairs> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}

pub fn render_pairs(pairs: &Pairs) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean for {key}: {value:?}"
        ))),
    }
}

/// Something configurable one key at a time.
pub trait Settable {
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    fn apply(&mut self, pairs: &Pairs) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }
}
