//! Calendar quarters and UTC timestamps.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// Seconds since the Unix epoch, UTC.
pub type Timestamp = i64;

pub const SECONDS_PER_HOUR: i64 = 3_600;
pub const SECONDS_PER_DAY: i64 = 86_400;

/// A (year, quarter) key. Orders chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    pub quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Option<Quarter> {
        (1..=4)
            .contains(&quarter)
            .then_some(Quarter { year, quarter })
    }

    /// The calendar quarter a timestamp falls in.
    pub fn of_timestamp(ts: Timestamp) -> Quarter {
        let dt = Utc
            .timestamp_opt(ts, 0)
            .single()
            .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
        Quarter {
            year: dt.year(),
            quarter: (dt.month0() / 3 + 1) as u8,
        }
    }

    /// Consecutive quarters have consecutive indices.
    pub fn index(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_index(index: i64) -> Quarter {
        Quarter {
            year: index.div_euclid(4) as i32,
            quarter: (index.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn next(self) -> Quarter {
        Quarter::from_index(self.index() + 1)
    }

    pub fn prev(self) -> Quarter {
        Quarter::from_index(self.index() - 1)
    }

    pub fn offset(self, quarters: i64) -> Quarter {
        Quarter::from_index(self.index() + quarters)
    }

    /// First second of the quarter.
    pub fn start(self) -> Timestamp {
        let month = (self.quarter as u32 - 1) * 3 + 1;
        Utc.with_ymd_and_hms(self.year, month, 1, 0, 0, 0)
            .single()
            .map(|d| d.timestamp())
            .unwrap_or_default()
    }

    /// First second after the quarter.
    pub fn end(self) -> Timestamp {
        self.next().start()
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (y, q) = s
            .split_once(['Q', 'q'])
            .ok_or_else(|| format!("bad quarter `{s}`"))?;
        let year = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let quarter = q.parse().map_err(|_| format!("bad quarter in `{s}`"))?;
        Quarter::new(year, quarter).ok_or_else(|| format!("quarter out of range in `{s}`"))
    }
}

/// Parses an ISO-8601 UTC timestamp. Accepts RFC 3339 (any offset) and the
/// bare `YYYY-MM-DDTHH:MM:SS` / `YYYY-MM-DD HH:MM:SS` forms, read as UTC.
pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

pub fn format_timestamp(ts: Timestamp) -> String {
    Utc.timestamp_opt(ts, 0)
        .single()
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_of_timestamp() {
        let ts = parse_timestamp("2010-05-17T12:00:00Z").unwrap();
        assert_eq!(Quarter::of_timestamp(ts), Quarter::new(2010, 2).unwrap());
        let q4 = Quarter::new(2010, 4).unwrap();
        assert_eq!(q4.next(), Quarter::new(2011, 1).unwrap());
        assert_eq!(q4.next().prev(), q4);
        assert_eq!(Quarter::of_timestamp(q4.start()), q4);
        assert_eq!(Quarter::of_timestamp(q4.end() - 1), q4);
    }

    #[test]
    fn timestamp_round_trip() {
        let ts = parse_timestamp("2012-02-29T23:59:59Z").unwrap();
        assert_eq!(format_timestamp(ts), "2012-02-29T23:59:59Z");
        assert_eq!(parse_timestamp("2012-02-29 23:59:59"), Some(ts));
        assert_eq!(parse_timestamp("2012-03-01T01:59:59+02:00"), Some(ts));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn quarter_parse() {
        assert_eq!("2016Q3".parse::<Quarter>().unwrap().to_string(), "2016Q3");
        assert!("2016Q5".parse::<Quarter>().is_err());
    }
}
