//! Analyst weights from predicted errors, and the improved and simple
//! consensus for one event.

use serde::{Deserialize, Serialize};

use crate::bias::Granularity;
use crate::error::{Error, Result};
use crate::features::{NormalizedRow, Scaling};
use crate::ingest::Identity;
use crate::model::{predict_daae, PeriodModel, VariableMask};
use crate::money::{mean_cents, Cents};

pub const DEFAULT_EXPONENT: f64 = 1.2;

/// How the bias of a prediction is looked up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    Keyed(Granularity),
    /// `firm_weight * firm bias + (1 - firm_weight) * analyst bias`.
    Blend {
        firm_weight: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Weighted,
    /// Hindsight benchmark: the single prediction nearest the actual.
    ClosestAnalyst,
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    pub use_bias: bool,
    pub bias: BiasMode,
    pub use_expertise: bool,
    pub mask: VariableMask,
    pub scaling: Scaling,
    pub identity: Identity,
    pub exponent: f64,
    /// Minimum estimate lead in days; `None` keeps the ingest setting.
    pub recency_cutoff_days: Option<i64>,
    /// Average bias-adjusted predictions (true) or raw ones with the same weights.
    pub average_adjusted: bool,
    pub estimator: Estimator,
}

impl Default for ModeConfig {
    fn default() -> Self {
        ModeConfig {
            use_bias: true,
            bias: BiasMode::Keyed(Granularity::AnalystFirm),
            use_expertise: true,
            mask: VariableMask::default(),
            scaling: Scaling::Normalized,
            identity: Identity::Analyst,
            exponent: DEFAULT_EXPONENT,
            recency_cutoff_days: None,
            average_adjusted: true,
            estimator: Estimator::Weighted,
        }
    }
}

impl ModeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.0 && self.exponent.is_finite()) {
            return Err(Error::Config(format!(
                "exponent must be positive, got {}",
                self.exponent
            )));
        }
        if let Some(d) = self.recency_cutoff_days {
            if d < 2 {
                return Err(Error::Config(format!(
                    "recency cutoff must be at least 2 days, got {d}"
                )));
            }
        }
        if !self.mask.is_valid() {
            return Err(Error::Config(
                "at least one regressor must be active".into(),
            ));
        }
        if let BiasMode::Blend { firm_weight } = self.bias {
            if !(0.0..=1.0).contains(&firm_weight) {
                return Err(Error::Config(format!(
                    "blend weight {firm_weight} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    /// No model was fitted for the preceding calendar quarter.
    NoPreviousModel,
    /// The preceding quarter had too few observations to fit.
    ModelLess,
    /// Every analyst predicted at or above the event mean.
    ZeroWeights,
}

impl FallbackReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FallbackReason::NoPreviousModel => "no_previous_model",
            FallbackReason::ModelLess => "model_less",
            FallbackReason::ZeroWeights => "zero_weights",
        }
    }
}

/// State of the previous quarter's model as seen by the current quarter.
#[derive(Debug, Clone, Copy)]
pub enum PreviousModel<'a> {
    Fitted(&'a PeriodModel),
    ModelLess,
    Missing,
}

/// One participating prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalystInput {
    pub raw: Cents,
    /// Bias under the active mode (0 when bias correction is off).
    pub bias: f64,
    pub features: NormalizedRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAggregate {
    pub simple_consensus: f64,
    pub improved: f64,
    /// Normalized weights actually applied, in input order.
    pub weights: Vec<f64>,
    /// Predicted normalized errors, when a model was applied.
    pub predicted: Option<Vec<f64>>,
    pub fallback: Option<FallbackReason>,
}

/// Weight of one analyst: zero at or above the event mean predicted error,
/// otherwise `(mean - predicted)^r`.
pub fn weight(predicted: f64, event_mean: f64, exponent: f64) -> f64 {
    if predicted >= event_mean {
        0.0
    } else {
        (event_mean - predicted).powf(exponent)
    }
}

/// Unweighted mean of the raw final predictions.
pub fn simple_consensus(values: &[Cents]) -> Option<f64> {
    mean_cents(values.iter().copied())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `sum(w * v) / sum(w)` taken around `v[0]`, so that identical values
/// come back exactly.
fn anchored_mean(values: &[f64], weights: impl Iterator<Item = f64>) -> f64 {
    let anchor = values[0];
    let (mut num, mut den) = (0.0, 0.0);
    for (v, w) in values.iter().zip(weights) {
        num += w * (v - anchor);
        den += w;
    }
    anchor + num / den
}

/// Improved consensus for one event under `mode`.
///
/// Panics if `inputs` is empty; ingest guarantees the analyst minimum.
pub fn improved_consensus(
    inputs: &[AnalystInput],
    mode: &ModeConfig,
    model: PreviousModel<'_>,
) -> EventAggregate {
    assert!(!inputs.is_empty(), "event without predictions");
    let raw: Vec<Cents> = inputs.iter().map(|a| a.raw).collect();
    let simple = simple_consensus(&raw).unwrap_or_default();
    let adjusted = mode.use_bias && mode.average_adjusted;
    let values: Vec<f64> = inputs
        .iter()
        .map(|a| {
            if adjusted {
                a.raw.as_f64() - a.bias
            } else {
                a.raw.as_f64()
            }
        })
        .collect();
    let n = inputs.len();
    // Raw values are whole cents: their plain mean is exact and equals the
    // simple consensus bit for bit.
    let equal_mean = if adjusted {
        anchored_mean(&values, std::iter::repeat(1.0))
    } else {
        simple
    };
    let equal = |fallback| EventAggregate {
        simple_consensus: simple,
        improved: equal_mean,
        weights: vec![1.0 / n as f64; n],
        predicted: None,
        fallback,
    };

    if !mode.use_expertise {
        return equal(None);
    }
    let model = match model {
        PreviousModel::Fitted(m) => m,
        PreviousModel::ModelLess => return equal(Some(FallbackReason::ModelLess)),
        PreviousModel::Missing => return equal(Some(FallbackReason::NoPreviousModel)),
    };
    let predicted: Vec<f64> = inputs
        .iter()
        .map(|a| predict_daae(model, &a.features))
        .collect();
    let event_mean = mean(&predicted);
    let raw_weights: Vec<f64> = predicted
        .iter()
        .map(|p| weight(*p, event_mean, mode.exponent))
        .collect();
    let total: f64 = raw_weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        let mut agg = equal(Some(FallbackReason::ZeroWeights));
        agg.predicted = Some(predicted);
        return agg;
    }
    let improved = anchored_mean(&values, raw_weights.iter().copied());
    EventAggregate {
        simple_consensus: simple,
        improved,
        weights: raw_weights.iter().map(|w| w / total).collect(),
        predicted: Some(predicted),
        fallback: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::Quarter;
    use proptest::prelude::*;

    fn input(raw: i64, bias: f64, age: f64) -> AnalystInput {
        AnalystInput {
            raw: Cents(raw),
            bias,
            features: NormalizedRow {
                x: [age, 0.0, 0.0, 0.0, 0.0, 0.0],
                daae: 0.0,
            },
        }
    }

    fn age_model() -> PeriodModel {
        PeriodModel {
            period: Quarter::new(2010, 1).unwrap(),
            beta: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            n_obs: 100,
            rss: 0.0,
        }
    }

    #[test]
    fn weight_examples() {
        let preds = [-1.0, 0.0, 1.0];
        let m = preds.iter().sum::<f64>() / 3.0;
        let w: Vec<f64> = preds.iter().map(|p| weight(*p, m, 1.2)).collect();
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
        assert_eq!(weight(0.5, 0.5, 1.2), 0.0);
    }

    #[test]
    fn weight_matches_high_precision_power() {
        // predictions (-0.2, 0, 0.3): mean 1/30. Reference values from a
        // 40-digit mpmath evaluation:
        //   (7/30)^1.2 = 0.1744103053177651142921140979092545589253
        //   (1/30)^1.2 = 0.01688318947040393983332449305432545177651
        let preds = [-0.2, 0.0, 0.3];
        let m = preds.iter().sum::<f64>() / 3.0;
        let w: Vec<f64> = preds.iter().map(|p| weight(*p, m, 1.2)).collect();
        assert!((w[0] - 0.174_410_305_317_765_1).abs() < 1e-15);
        assert!((w[1] - 0.016_883_189_470_403_94).abs() < 1e-15);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn simple_consensus_examples() {
        assert_eq!(simple_consensus(&[Cents(3), Cents(5)]), Some(4.0));
        assert_eq!(simple_consensus(&[Cents(9)]), Some(9.0));
        assert_eq!(simple_consensus(&[]), None);
    }

    #[test]
    fn one_dominant_analyst() {
        let inputs = [
            input(100, 2.0, -1.0),
            input(110, 0.0, 0.0),
            input(120, 0.0, 1.0),
        ];
        let agg = improved_consensus(
            &inputs,
            &ModeConfig::default(),
            PreviousModel::Fitted(&age_model()),
        );
        assert_eq!(agg.improved, 98.0);
        assert_eq!(agg.weights, vec![1.0, 0.0, 0.0]);
        assert_eq!(agg.fallback, None);
        assert_eq!(agg.simple_consensus, 110.0);
    }

    #[test]
    fn no_bias_no_expertise_is_simple_consensus() {
        let mode = ModeConfig {
            use_bias: false,
            use_expertise: false,
            ..ModeConfig::default()
        };
        let inputs = [
            input(101, 0.0, 0.1),
            input(103, 0.0, 0.0),
            input(108, 0.0, -0.1),
        ];
        let agg = improved_consensus(&inputs, &mode, PreviousModel::Fitted(&age_model()));
        assert_eq!(agg.improved.to_bits(), agg.simple_consensus.to_bits());
        assert_eq!(agg.fallback, None);
    }

    #[test]
    fn fallbacks_use_equal_weights() {
        let inputs = [input(100, 1.0, 0.0), input(104, 1.0, 0.0)];
        let mode = ModeConfig::default();
        let agg = improved_consensus(&inputs, &mode, PreviousModel::Missing);
        assert_eq!(agg.fallback, Some(FallbackReason::NoPreviousModel));
        assert_eq!(agg.improved, 101.0);
        let agg = improved_consensus(&inputs, &mode, PreviousModel::ModelLess);
        assert_eq!(agg.fallback, Some(FallbackReason::ModelLess));
        let agg = improved_consensus(&inputs, &mode, PreviousModel::Fitted(&age_model()));
        assert_eq!(agg.fallback, Some(FallbackReason::ZeroWeights));
        assert_eq!(agg.improved, 101.0);
    }

    #[test]
    fn identical_predictions_come_back_exactly() {
        let inputs: Vec<_> = [0.37, -0.11, 0.05, -0.52, 0.2, -0.03, 0.44, -0.29]
            .iter()
            .map(|&age| input(101, 0.1, age))
            .collect();
        let agg = improved_consensus(
            &inputs,
            &ModeConfig::default(),
            PreviousModel::Fitted(&age_model()),
        );
        assert!(agg.fallback.is_none());
        assert_eq!(agg.improved, 101.0 - 0.1);
        let agg = improved_consensus(&inputs, &ModeConfig::default(), PreviousModel::Missing);
        assert_eq!(agg.improved, 101.0 - 0.1);
    }

    #[test]
    fn zero_noise_synthetic_event_recovers_actual() {
        // Eight analysts, actual 250, bias b_i known exactly, no noise:
        // every adjusted prediction is 250.
        let actual = 250;
        let biases = [-6i64, -3, 0, 2, 4, 5, 9, 11];
        let inputs: Vec<_> = biases
            .iter()
            .enumerate()
            .map(|(i, b)| input(actual + b, *b as f64, (i as f64 - 3.5) / 10.0))
            .collect();
        let agg = improved_consensus(
            &inputs,
            &ModeConfig::default(),
            PreviousModel::Fitted(&age_model()),
        );
        assert!((agg.improved - actual as f64).abs() < 1e-12);
        let mean_bias = biases.iter().sum::<i64>() as f64 / 8.0;
        assert_eq!(agg.simple_consensus - actual as f64, mean_bias);
    }

    #[test]
    fn mode_validation() {
        assert!(ModeConfig::default().validate().is_ok());
        let bad = ModeConfig {
            exponent: 0.0,
            ..ModeConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModeConfig {
            recency_cutoff_days: Some(1),
            ..ModeConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModeConfig {
            mask: VariableMask([false; 6]),
            ..ModeConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn improved_is_convex_combination(
            rows in prop::collection::vec((-500i64..500, -20.0f64..20.0, -1.0f64..1.0), 1..15),
            r in 0.5f64..3.0,
        ) {
            let inputs: Vec<_> = rows.iter().map(|(v, b, a)| input(*v, *b, *a)).collect();
            let mode = ModeConfig { exponent: r, ..ModeConfig::default() };
            let agg = improved_consensus(&inputs, &mode, PreviousModel::Fitted(&age_model()));
            let used: Vec<f64> = inputs
                .iter()
                .zip(&agg.weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(a, _)| a.raw.as_f64() - a.bias)
                .collect();
            let lo = used.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = used.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg.improved >= lo - 1e-9 && agg.improved <= hi + 1e-9);
            let s: f64 = agg.weights.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scaling_money_scales_consensus(
            rows in prop::collection::vec((-500i64..500, -1.0f64..1.0), 2..12),
        ) {
            let inputs: Vec<_> = rows.iter().map(|(v, a)| input(*v, 0.0, *a)).collect();
            let scaled: Vec<_> = rows.iter().map(|(v, a)| input(v * 7, 0.0, *a)).collect();
            let mode = ModeConfig::default();
            let a = improved_consensus(&inputs, &mode, PreviousModel::Fitted(&age_model()));
            let b = improved_consensus(&scaled, &mode, PreviousModel::Fitted(&age_model()));
            prop_assert!((b.simple_consensus - 7.0 * a.simple_consensus).abs() < 1e-9);
            prop_assert!((b.improved - 7.0 * a.improved).abs() < 1e-9);
        }
    }
}
