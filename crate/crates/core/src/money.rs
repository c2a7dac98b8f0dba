//! Fixed-point money in integer cents.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Currency per share in cents.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Cents(pub i64);

impl Cents {
    pub const ZERO: Cents = Cents(0);

    pub fn abs(self) -> Cents {
        Cents(self.0.abs())
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl Sub for Cents {
    type Output = Cents;
    fn sub(self, rhs: Cents) -> Cents {
        Cents(self.0 - rhs.0)
    }
}

impl Neg for Cents {
    type Output = Cents;
    fn neg(self) -> Cents {
        Cents(-self.0)
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Arithmetic mean of a set of cent values, computed as one integer sum
/// followed by a single division so equal inputs always give equal bits.
pub fn mean_cents(values: impl IntoIterator<Item = Cents>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0i64, 0usize), |(s, n), v| (s + v.0, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}
