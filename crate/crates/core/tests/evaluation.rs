mod common;

use common::*;
use consensus_core::evaluate::{
    average_stat, closest_analyst, descriptive_stats, median_stat, surprise_improvement,
    trend_stat, SurprisePair,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_pairs(seed: u64, n: usize) -> Vec<SurprisePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let o: f64 = rng.random_range(-40.0..40.0);
            let o = if o.abs() < 0.5 { 0.5 } else { o };
            let noise: f64 = StandardNormal.sample(&mut rng);
            SurprisePair::new(o, 0.6 * o + 3.0 * noise)
        })
        .collect()
}

#[test]
fn median_of_101_pairs_matches_full_sort() {
    for seed in 0..20 {
        let pairs = random_pairs(seed, 101);
        assert!((median_stat(&pairs).unwrap() - median_oracle(&pairs)).abs() < 1e-15);
    }
}

#[test]
fn median_of_even_counts_matches_full_sort() {
    for seed in 0..20 {
        let pairs = random_pairs(100 + seed, 250);
        let got = median_stat(&pairs).unwrap();
        assert!((got - median_oracle(&pairs)).abs() < 1e-15);
    }
}

#[test]
fn improvement_matches_oracle() {
    for p in random_pairs(9, 500) {
        assert!((surprise_improvement(p) - improvement_oracle(&p)).abs() < 1e-15);
    }
    let zero = SurprisePair::new(0.0, 2.0);
    assert_eq!(surprise_improvement(zero), f64::NEG_INFINITY);
}

#[test]
fn trend_on_noisy_data_matches_closed_form() {
    for seed in 0..10 {
        let pairs = random_pairs(200 + seed, 400);
        let t = trend_stat(&pairs).unwrap();
        let (slope, intercept, r2) = trend_oracle(&pairs);
        assert!((t.slope - slope).abs() < 1e-10);
        assert!((t.trend - (1.0 - slope)).abs() < 1e-10);
        assert!((t.intercept - intercept).abs() < 1e-10);
        assert!((t.r_squared - r2).abs() < 1e-10);
    }
}

#[test]
fn closest_analyst_examples() {
    assert_eq!(closest_analyst(&[98.0, 101.0, 103.0], 100.0), Some(1.0));
    assert_eq!(closest_analyst(&[98.0, 100.0, 103.0], 100.0), Some(0.0));
    // An exact hit turns any nonzero surprise into a full improvement.
    let p = SurprisePair::new(3.0, 0.0);
    assert_eq!(surprise_improvement(p), 1.0);
}

proptest! {
    #[test]
    fn antisymmetric_data_has_zero_intercept(
        raw in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..100)
    ) {
        let mut pairs: Vec<SurprisePair> = raw.iter().map(|&(o, i)| SurprisePair::new(o, i)).collect();
        pairs.extend(raw.iter().map(|&(o, i)| SurprisePair::new(-o, -i)));
        if let Some(t) = trend_stat(&pairs) {
            prop_assert!(t.intercept.abs() < 1e-10, "intercept {}", t.intercept);
        }
    }

    #[test]
    fn statistics_ignore_global_scale(seed in 0u64..1000, c in 0.01f64..1000.0) {
        let pairs = random_pairs(seed, 60);
        let scaled: Vec<SurprisePair> = pairs.iter().map(|p| p.scaled(c)).collect();
        let (m, ms) = (median_stat(&pairs).unwrap(), median_stat(&scaled).unwrap());
        prop_assert!((m - ms).abs() < 1e-12);
        let (a, as_) = (average_stat(&pairs).unwrap(), average_stat(&scaled).unwrap());
        prop_assert!((a - as_).abs() < 1e-12);
    }

    #[test]
    fn average_is_the_same_in_any_chunking(seed in 0u64..1000, split in 1usize..59) {
        let pairs = random_pairs(seed, 60);
        // Accumulate the two sums chunk by chunk, as a streaming consumer would.
        let (head, tail) = pairs.split_at(split);
        let sums = |s: &[SurprisePair]| s.iter().fold((0.0, 0.0), |(o, i), p| (o + p.original.abs(), i + p.improved.abs()));
        let ((o1, i1), (o2, i2)) = (sums(head), sums(tail));
        let streamed = 1.0 - (i1 + i2) / (o1 + o2);
        prop_assert!((average_stat(&pairs).unwrap() - streamed).abs() < 1e-12);
        prop_assert!((average_stat(&pairs).unwrap() - average_oracle(&pairs)).abs() < 1e-12);
    }
}

#[test]
fn descriptive_examples() {
    // One firm, eight analysts all around an actual of 100.
    let mut est: Vec<_> = (0..8)
        .map(|i| estimate(&format!("A{i}"), "F", "2010Q1", "2010-03-01T12:00:00Z", 100))
        .collect();
    est.extend((0..8).map(|i| {
        estimate(
            &format!("A{i}"),
            "F",
            "2010Q2",
            "2010-06-01T12:00:00Z",
            96 + i,
        )
    }));
    let act = vec![
        actual("F", "2010Q1", "2010-04-20T21:00:00Z", 100),
        actual("F", "2010Q2", "2010-07-20T21:00:00Z", 100),
    ];
    let panel = consensus_core::ingest::build_panel(&est, &act, &Default::default());
    let t = descriptive_stats(panel.events()).unwrap();
    assert_eq!(
        (t.symbols, t.reports, t.predictions, t.analysts),
        (1, 1, 8, 8)
    );
    assert_eq!(t.actual_in_range_share, 1.0);
    // Consensus 99.5 sits below the actual: a positive surprise.
    assert_eq!(t.negative_surprise_share, 0.0);
    assert_eq!(t.mean_abs_surprise, 0.5);
}
