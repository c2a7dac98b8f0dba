//! Seeded synthetic panels with known latent structure.
//!
//! Each estimate's signed error is
//!
//! ```text
//! ERR = general_bias + pair_bias[analyst, firm] - common_shock[event]
//!       + skill[analyst] * idio_scale * (1 + age_coupling * age / 365) * z
//! ```
//!
//! with `pair_bias ~ N(0, bias_scale)` drawn once per (analyst, firm),
//! `skill` log-uniform on `[1/sqrt(s), sqrt(s)]` for `s = skill_spread`,
//! and the noise variance `noise_scale^2` split between the common shock
//! and the idiosyncratic term by `common_noise_share`. The general bias is
//! solved so that the expected share of negative surprises matches
//! `negative_surprise_target`.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::calendar::{Quarter, SECONDS_PER_DAY};
use crate::config::{parse_bool, parse_value, Settable};
use crate::error::{Error, Result};
use crate::ingest::{write_actuals, write_estimates, Actual, Estimate};
use crate::money::Cents;

/// Each analyst's first estimate for an event is issued this many days
/// before the announcement (uniform).
pub const INITIAL_AGE_DAYS: (f64, f64) = (70.0, 300.0);
/// Revisions, if any, fall uniformly in this range.
pub const REVISION_AGE_DAYS: (f64, f64) = (3.0, 70.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCouplings {
    /// Relative growth of noise per year of estimate age.
    pub age_per_year: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_firms: usize,
    pub n_analysts: usize,
    pub n_brokers: usize,
    pub n_quarters: usize,
    pub analysts_per_event: usize,
    /// Analysts eligible to cover each firm; defaults to 1.5x analysts_per_event.
    pub coverage_pool: Option<usize>,
    /// Std. dev. of the per-(analyst, firm) bias, cents.
    pub bias_scale: f64,
    /// Ratio between the noisiest and the most precise analyst.
    pub skill_spread: f64,
    /// Std. dev. of the total prediction noise, cents.
    pub noise_scale: f64,
    /// Fraction of the noise variance shared by every analyst of an event.
    pub common_noise_share: f64,
    pub couplings: FeatureCouplings,
    pub negative_surprise_target: f64,
    /// Student-t (3 d.o.f., unit variance) noise instead of Gaussian.
    pub heavy_tails: bool,
    /// Most estimates one analyst issues for one event.
    pub max_revisions: u32,
    pub start_year: i32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_firms: 50,
            n_analysts: 200,
            n_brokers: 25,
            n_quarters: 40,
            analysts_per_event: 10,
            coverage_pool: None,
            bias_scale: 5.0,
            skill_spread: 3.0,
            noise_scale: 3.0,
            common_noise_share: 0.5,
            couplings: FeatureCouplings { age_per_year: 1.0 },
            negative_surprise_target: 0.3,
            heavy_tails: false,
            max_revisions: 3,
            start_year: 2004,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn pool_size(&self) -> usize {
        self.coverage_pool
            .unwrap_or_else(|| ((self.analysts_per_event * 3).div_ceil(2)).min(self.n_analysts))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.analysts_per_event > self.n_analysts {
            return bad(format!(
                "analysts_per_event {} exceeds n_analysts {}",
                self.analysts_per_event, self.n_analysts
            ));
        }
        if self.analysts_per_event < 8 {
            return bad(format!(
                "analysts_per_event {} below 8",
                self.analysts_per_event
            ));
        }
        let pool = self.pool_size();
        if pool < self.analysts_per_event || pool > self.n_analysts {
            return bad(format!(
                "coverage pool {pool} outside [analysts_per_event, n_analysts]"
            ));
        }
        if self.n_firms == 0 || self.n_quarters == 0 || self.n_brokers == 0 {
            return bad("n_firms, n_quarters and n_brokers must be positive".into());
        }
        let scales = [
            self.bias_scale,
            self.noise_scale,
            self.couplings.age_per_year,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("scales must be finite and non-negative".into());
        }
        if !(self.skill_spread >= 1.0 && self.skill_spread.is_finite()) {
            return bad(format!("skill_spread {} below 1", self.skill_spread));
        }
        if !(0.0..=1.0).contains(&self.common_noise_share) {
            return bad("common_noise_share outside [0, 1]".into());
        }
        if !(self.negative_surprise_target > 0.0 && self.negative_surprise_target < 1.0) {
            return bad("negative_surprise_target outside (0, 1)".into());
        }
        if self.max_revisions == 0 {
            return bad("max_revisions must be positive".into());
        }
        Ok(())
    }

    pub fn common_scale(&self) -> f64 {
        self.noise_scale * self.common_noise_share.sqrt()
    }

    pub fn idio_scale(&self) -> f64 {
        self.noise_scale * (1.0 - self.common_noise_share).sqrt()
    }

    /// E[skill^2] for the log-uniform skill multiplier.
    pub fn mean_sq_skill(&self) -> f64 {
        let half = self.skill_spread.ln() / 2.0;
        if half == 0.0 {
            1.0
        } else {
            (2.0 * half).sinh() / (2.0 * half)
        }
    }

    /// E[(1 + c * age / 365)^2] over the final-estimate age distribution.
    ///
    /// With one estimate the age is the initial one. With `k > 1` it is
    /// the youngest of `k - 1` uniform revisions: `lo + (hi - lo) * B`,
    /// `B ~ Beta(1, k - 1)`.
    pub fn mean_sq_age_factor(&self) -> f64 {
        let c = self.couplings.age_per_year / 365.0;
        let sq = |m1: f64, m2: f64| 1.0 + 2.0 * c * m1 + c * c * m2;
        let (lo, hi) = INITIAL_AGE_DAYS;
        let mut total = sq((lo + hi) / 2.0, (lo * lo + lo * hi + hi * hi) / 3.0);
        let (lo, hi) = REVISION_AGE_DAYS;
        let w = hi - lo;
        for k in 2..=self.max_revisions {
            let m = (k - 1) as f64;
            let (b1, b2) = (1.0 / (m + 1.0), 2.0 / ((m + 1.0) * (m + 2.0)));
            total += sq(lo + w * b1, lo * lo + 2.0 * lo * w * b1 + w * w * b2);
        }
        total / self.max_revisions as f64
    }

    /// Approximate std. dev. of the simple-consensus surprise around its mean.
    pub fn surprise_scale(&self) -> f64 {
        let k = self.analysts_per_event as f64;
        let var = self.common_scale().powi(2)
            + self.bias_scale.powi(2) / k
            + self.idio_scale().powi(2) * self.mean_sq_skill() * self.mean_sq_age_factor() / k;
        var.sqrt()
    }

    /// Common additive bias giving the targeted negative-surprise share.
    pub fn general_bias(&self) -> f64 {
        let sigma = self.surprise_scale();
        if sigma == 0.0 {
            return 0.0;
        }
        let std = StatNormal::new(0.0, 1.0).expect("unit normal");
        sigma * std.inverse_cdf(self.negative_surprise_target)
    }
}

impl Settable for SynthSpec {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_firms" => self.n_firms = parse_value(key, value)?,
            "n_analysts" => self.n_analysts = parse_value(key, value)?,
            "n_brokers" => self.n_brokers = parse_value(key, value)?,
            "n_quarters" => self.n_quarters = parse_value(key, value)?,
            "analysts_per_event" => self.analysts_per_event = parse_value(key, value)?,
            "coverage_pool" => self.coverage_pool = Some(parse_value(key, value)?),
            "bias_scale" => self.bias_scale = parse_value(key, value)?,
            "skill_spread" => self.skill_spread = parse_value(key, value)?,
            "noise_scale" => self.noise_scale = parse_value(key, value)?,
            "common_noise_share" => self.common_noise_share = parse_value(key, value)?,
            "age_coupling" => self.couplings.age_per_year = parse_value(key, value)?,
            "negative_surprise_target" => self.negative_surprise_target = parse_value(key, value)?,
            "heavy_tails" => self.heavy_tails = parse_bool(key, value)?,
            "max_revisions" => self.max_revisions = parse_value(key, value)?,
            "start_year" => self.start_year = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown synth setting `{key}`"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalystTruth {
    pub analyst_id: String,
    pub broker_id: String,
    pub skill: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBias {
    pub analyst_id: String,
    pub firm_id: String,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmTruth {
    pub firm_id: String,
    pub pool: Vec<String>,
}

/// Every latent parameter behind a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub general_bias: f64,
    pub analysts: Vec<AnalystTruth>,
    pub firms: Vec<FirmTruth>,
    pub pair_biases: Vec<PairBias>,
}

#[derive(Debug, Clone)]
pub struct SynthPanel {
    pub estimates: Vec<Estimate>,
    pub actuals: Vec<Actual>,
    pub truth: GroundTruth,
}

enum Noise {
    Gaussian(Normal<f64>),
    Heavy(StudentT<f64>),
}

impl Noise {
    fn new(heavy: bool) -> Self {
        if heavy {
            Noise::Heavy(StudentT::new(3.0).expect("valid dof"))
        } else {
            Noise::Gaussian(Normal::new(0.0, 1.0).expect("unit normal"))
        }
    }

    /// Unit-variance draw.
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Noise::Gaussian(n) => n.sample(rng),
            Noise::Heavy(t) => t.sample(rng) / 3f64.sqrt(),
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn analyst_id(i: usize) -> String {
    format!("A{i:04}")
}

pub fn broker_id(i: usize) -> String {
    format!("B{i:03}")
}

pub fn firm_id(j: usize) -> String {
    format!("F{j:03}")
}

/// Draws `size` analysts for one firm, at most one per broker while
/// unused brokers remain.
fn draw_pool(rng: &mut ChaCha8Rng, analysts: &[AnalystTruth], size: usize) -> Vec<usize> {
    let order = sample(rng, analysts.len(), analysts.len()).into_vec();
    let mut brokers = std::collections::BTreeSet::new();
    let (mut pool, mut rest) = (Vec::with_capacity(size), Vec::new());
    for i in order {
        if pool.len() < size && brokers.insert(analysts[i].broker_id.as_str()) {
            pool.push(i);
        } else {
            rest.push(i);
        }
    }
    let missing = size - pool.len();
    pool.extend(rest.into_iter().take(missing));
    pool
}

/// Generates a panel. Output is a pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthPanel> {
    spec.validate()?;
    let noise = Noise::new(spec.heavy_tails);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let general_bias = spec.general_bias();

    // Stream 0: analyst-level parameters. Brokers get a skewed headcount.
    let mut rng = rng_for(spec.seed, 0);
    let broker_weights: Vec<f64> = (0..spec.n_brokers)
        .map(|k| 1.0 / (k as f64 + 1.0))
        .collect();
    let total_weight: f64 = broker_weights.iter().sum();
    let half_log_spread = spec.skill_spread.ln() / 2.0;
    let analysts: Vec<AnalystTruth> = (0..spec.n_analysts)
        .map(|i| {
            let mut u = rng.random::<f64>() * total_weight;
            let mut broker = spec.n_brokers - 1;
            for (k, w) in broker_weights.iter().enumerate() {
                if u < *w {
                    broker = k;
                    break;
                }
                u -= w;
            }
            let skill = if half_log_spread == 0.0 {
                1.0
            } else {
                rng.random_range(-half_log_spread..=half_log_spread).exp()
            };
            AnalystTruth {
                analyst_id: analyst_id(i),
                broker_id: broker_id(broker),
                skill,
            }
        })
        .collect();

    let pool_size = spec.pool_size();
    let mut estimates = Vec::new();
    let mut actuals = Vec::new();
    let mut firms = Vec::new();
    let mut pair_biases = Vec::new();
    let first = Quarter::new(spec.start_year, 1).expect("valid quarter");
    let (idio, common) = (spec.idio_scale(), spec.common_scale());
    let age_coupling = spec.couplings.age_per_year;

    for j in 0..spec.n_firms {
        let mut rng = rng_for(spec.seed, j as u64 + 1);
        let fid = firm_id(j);
        let mut pool = draw_pool(&mut rng, &analysts, pool_size);
        pool.sort_unstable();
        let biases: Vec<f64> = pool
            .iter()
            .map(|_| spec.bias_scale * unit.sample(&mut rng))
            .collect();
        for (&a, &b) in pool.iter().zip(&biases) {
            pair_biases.push(PairBias {
                analyst_id: analysts[a].analyst_id.clone(),
                firm_id: fid.clone(),
                bias: b,
            });
        }
        firms.push(FirmTruth {
            firm_id: fid.clone(),
            pool: pool
                .iter()
                .map(|&a| analysts[a].analyst_id.clone())
                .collect(),
        });

        let mut level = rng.random_range(50.0..300.0f64);
        for t in 0..spec.n_quarters {
            let period = first.offset(t as i64);
            level += 5.0 * unit.sample(&mut rng);
            let actual = Cents(level.round() as i64);
            let announce_days = rng.random_range(20.0..45.0f64);
            let announce_time =
                period.end() + (announce_days * SECONDS_PER_DAY as f64) as i64 + 21 * 3600;
            actuals.push(Actual {
                firm_id: fid.clone(),
                period,
                announce_time,
                value: actual,
            });
            let shock = common * noise.draw(&mut rng);

            let mut chosen = sample(&mut rng, pool.len(), spec.analysts_per_event).into_vec();
            chosen.sort_unstable();
            let mut rows = Vec::new();
            for slot in chosen {
                let analyst = &analysts[pool[slot]];
                let bias = biases[slot];
                let revisions = rng.random_range(1..=spec.max_revisions);
                for r in 0..revisions {
                    let age = if r == 0 {
                        rng.random_range(INITIAL_AGE_DAYS.0..INITIAL_AGE_DAYS.1)
                    } else {
                        rng.random_range(REVISION_AGE_DAYS.0..REVISION_AGE_DAYS.1)
                    };
                    let scale = analyst.skill * idio * (1.0 + age_coupling * age / 365.0);
                    let err = general_bias + bias - shock + scale * noise.draw(&mut rng);
                    rows.push(Estimate {
                        analyst_id: analyst.analyst_id.clone(),
                        broker_id: analyst.broker_id.clone(),
                        firm_id: fid.clone(),
                        period,
                        estimate_time: announce_time
                            - (age * SECONDS_PER_DAY as f64).round() as i64,
                        horizon_code: 6,
                        value: Cents(actual.0 + err.round() as i64),
                    });
                }
            }
            rows.sort_by(|x, y| {
                (&x.analyst_id, x.estimate_time).cmp(&(&y.analyst_id, y.estimate_time))
            });
            estimates.extend(rows);
        }
    }

    Ok(SynthPanel {
        estimates,
        actuals,
        truth: GroundTruth {
            spec: spec.clone(),
            general_bias,
            analysts,
            firms,
            pair_biases,
        },
    })
}

pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const ACTUALS_FILE: &str = "actuals.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

impl SynthPanel {
    pub fn estimates_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_estimates(&mut buf, &self.estimates)?;
        Ok(buf)
    }

    pub fn actuals_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_actuals(&mut buf, &self.actuals)?;
        Ok(buf)
    }

    pub fn ground_truth_json(&self) -> Result<Vec<u8>> {
        let mut buf = serde_json::to_vec_pretty(&self.truth)?;
        buf.push(b'\n');
        Ok(buf)
    }

    /// Writes the three files into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in [
            (ESTIMATES_FILE, self.estimates_csv()?),
            (ACTUALS_FILE, self.actuals_csv()?),
            (GROUND_TRUTH_FILE, self.ground_truth_json()?),
        ] {
            let path = dir.join(name);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
