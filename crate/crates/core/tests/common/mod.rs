//! Test-only oracles and fixture builders. Nothing here calls into the
//! numerical code it is used to check.
#![allow(dead_code)]

use consensus_core::calendar::{parse_timestamp, Quarter, Timestamp};
use consensus_core::evaluate::SurprisePair;
use consensus_core::ingest::{Actual, Estimate};
use consensus_core::Cents;

/// Least squares by Householder QR on the design itself (no normal
/// equations). Requires full column rank.
#[allow(clippy::needless_range_loop)]
pub fn householder_lstsq(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let (n, p) = (x.len(), x[0].len());
    let mut a: Vec<Vec<f64>> = x.to_vec();
    let mut b = y.to_vec();
    for k in 0..p {
        let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..p {
            let dot: f64 = (k..n).map(|i| v[i - k] * a[i][j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                a[i][j] -= f * v[i - k];
            }
        }
        let dot: f64 = (k..n).map(|i| v[i - k] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..n {
            b[i] -= f * v[i - k];
        }
    }
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = (k + 1..p).map(|j| a[k][j] * beta[j]).sum();
        beta[k] = (b[k] - s) / a[k][k];
    }
    beta
}

pub fn improvement_oracle(p: &SurprisePair) -> f64 {
    let (o, i) = (p.original.abs(), p.improved.abs());
    match (o == 0.0, i == 0.0) {
        (true, true) => 0.0,
        (true, false) => f64::NEG_INFINITY,
        _ => (o - i) / o,
    }
}

/// Median of finite improvements by full sort.
pub fn median_oracle(pairs: &[SurprisePair]) -> f64 {
    let mut v: Vec<f64> = pairs.iter().map(improvement_oracle).collect();
    assert!(
        v.iter().all(|x| x.is_finite()),
        "oracle handles finite values only"
    );
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * v[n / 2 - 1] + 0.5 * v[n / 2]
    }
}

pub fn average_oracle(pairs: &[SurprisePair]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for p in pairs {
        num += p.improved.abs();
        den += p.original.abs();
    }
    (den - num) / den
}

/// (slope, intercept, r^2) from raw moment sums.
pub fn trend_oracle(pairs: &[SurprisePair]) -> (f64, f64, f64) {
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in pairs {
        let (x, y) = (p.original, p.improved);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let cov = sxy / n - (sx / n) * (sy / n);
    let var_x = sxx / n - (sx / n) * (sx / n);
    let var_y = syy / n - (sy / n) * (sy / n);
    let slope = cov / var_x;
    (slope, sy / n - slope * sx / n, cov * cov / (var_x * var_y))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut c = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        c += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    c / (va * vb).sqrt()
}

pub fn ts(s: &str) -> Timestamp {
    parse_timestamp(s).unwrap_or_else(|| panic!("bad timestamp {s}"))
}

pub fn q(s: &str) -> Quarter {
    s.parse().unwrap()
}

pub fn estimate(analyst: &str, firm: &str, period: &str, at: &str, cents: i64) -> Estimate {
    Estimate {
        analyst_id: analyst.into(),
        broker_id: format!("BRK-{analyst}"),
        firm_id: firm.into(),
        period: q(period),
        estimate_time: ts(at),
        horizon_code: 6,
        value: Cents(cents),
    }
}

pub fn actual(firm: &str, period: &str, at: &str, cents: i64) -> Actual {
    Actual {
        firm_id: firm.into(),
        period: q(period),
        announce_time: ts(at),
        value: Cents(cents),
    }
}

pub fn scale_money(
    estimates: &[Estimate],
    actuals: &[Actual],
    c: i64,
) -> (Vec<Estimate>, Vec<Actual>) {
    let e = estimates
        .iter()
        .map(|e| Estimate {
            value: Cents(e.value.0 * c),
            ..e.clone()
        })
        .collect();
    let a = actuals
        .iter()
        .map(|a| Actual {
            value: Cents(a.value.0 * c),
            ..a.clone()
        })
        .collect();
    (e, a)
}
