mod common;

use common::householder_lstsq;
use consensus_core::calendar::Quarter;
use consensus_core::features::{NormalizedRow, Variable, N_VARIABLES};
use consensus_core::model::{
    fit_period, least_squares, predict_daae, FitError, PeriodModel, VariableMask,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn quarter() -> Quarter {
    Quarter::new(2012, 3).unwrap()
}

/// Normal equations solved by Gauss-Jordan elimination with partial
/// pivoting, no regularization.
fn normal_equations_oracle(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut m = vec![vec![0.0; p + 1]; p];
    for (row, yi) in x.iter().zip(y) {
        for a in 0..p {
            for b in 0..p {
                m[a][b] += row[a] * row[b];
            }
            m[a][p] += row[a] * yi;
        }
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..p {
            if r != col {
                let f = m[r][col];
                let src = m[col].clone();
                for (v, s) in m[r].iter_mut().zip(src) {
                    *v -= f * s;
                }
            }
        }
    }
    m.iter().map(|r| r[p]).collect()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<NormalizedRow> {
    (0..n)
        .map(|_| {
            let mut x = [0.0; N_VARIABLES];
            for v in x.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let noise: f64 = StandardNormal.sample(rng);
            let daae = 0.4 * x[0] - 0.2 * x[1] + 0.1 * x[4] + 0.3 * noise;
            NormalizedRow { x, daae }
        })
        .collect()
}

#[test]
fn exact_fit_on_a_single_variable() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<NormalizedRow> = (0..40)
        .map(|_| {
            let mut x = [0.0; N_VARIABLES];
            x[Variable::Age.index()] = rng.random_range(-1.0..1.0);
            NormalizedRow {
                x,
                daae: 0.3 * x[Variable::Age.index()],
            }
        })
        .collect();
    let model = fit_period(quarter(), &rows, VariableMask::default()).unwrap();
    for (k, b) in model.beta.iter().enumerate() {
        let want = if k == Variable::Age.index() { 0.3 } else { 0.0 };
        assert!((b - want).abs() < 1e-12, "beta[{k}] = {b}");
    }
    assert!(model.rss < 1e-20);
}

#[test]
fn random_200_row_design_matches_normal_equations_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..20 {
        let rows = random_rows(&mut rng, 200);
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.x.to_vec()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.daae).collect();
        let oracle = normal_equations_oracle(&x, &y);
        let model = fit_period(quarter(), &rows, VariableMask::default()).unwrap();
        for (b, o) in model.beta.iter().zip(&oracle) {
            assert!((b - o).abs() < 1e-8, "{b} vs {o}");
        }
        assert_eq!(model.n_obs, 200);
    }
}

#[test]
fn duplicated_column_gives_the_reduced_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rows = random_rows(&mut rng, 150);
    let (exp, mae) = (Variable::Exp.index(), Variable::Mae.index());
    for r in &mut rows {
        r.x[exp] = r.x[mae];
    }
    let model = fit_period(quarter(), &rows, VariableMask::default()).unwrap();

    // Oracle: the same design with the duplicate removed, solved by QR.
    let reduced: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            (0..N_VARIABLES)
                .filter(|&k| k != exp)
                .map(|k| r.x[k])
                .collect()
        })
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r.daae).collect();
    let beta = householder_lstsq(&reduced, &y);
    let mut worst = 0.0f64;
    let mut oracle_rss = 0.0;
    for (r, xr) in rows.iter().zip(&reduced) {
        let want: f64 = xr.iter().zip(&beta).map(|(a, b)| a * b).sum();
        worst = worst.max((predict_daae(&model, r) - want).abs());
        oracle_rss += (r.daae - want).powi(2);
    }
    assert!(worst < 1e-8, "fitted values differ by {worst}");
    assert!((model.rss - oracle_rss).abs() < 1e-8 * oracle_rss.max(1.0));
    // The split between the twin columns is the minimum-norm one.
    assert!((model.beta[exp] - model.beta[mae]).abs() < 1e-6);
}

#[test]
fn prediction_matches_a_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let mut beta = [0.0; N_VARIABLES];
        let mut x = [0.0; N_VARIABLES];
        for k in 0..N_VARIABLES {
            beta[k] = rng.random_range(-3.0..3.0);
            x[k] = rng.random_range(-3.0..3.0);
        }
        let model = PeriodModel {
            period: quarter(),
            beta,
            n_obs: 0,
            rss: 0.0,
        };
        let mut want = 0.0;
        for k in 0..N_VARIABLES {
            want += beta[k] * x[k];
        }
        let got = predict_daae(&model, &NormalizedRow { x, daae: 0.0 });
        assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0));
    }
}

#[test]
fn prediction_examples() {
    let model = |beta| PeriodModel {
        period: quarter(),
        beta,
        n_obs: 0,
        rss: 0.0,
    };
    let mut x = [0.7; N_VARIABLES];
    assert_eq!(
        predict_daae(&model([0.0; N_VARIABLES]), &NormalizedRow { x, daae: 0.0 }),
        0.0
    );
    let mut beta = [0.0; N_VARIABLES];
    beta[0] = 1.0;
    x[0] = -0.5;
    assert_eq!(
        predict_daae(&model(beta), &NormalizedRow { x, daae: 0.0 }),
        -0.5
    );
}

#[test]
fn too_few_rows_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = random_rows(&mut rng, N_VARIABLES - 1);
    assert_eq!(
        fit_period(quarter(), &rows, VariableMask::default()),
        Err(FitError::InsufficientObservations {
            n_obs: N_VARIABLES - 1,
            required: N_VARIABLES
        })
    );
    assert!(fit_period(quarter(), &rows, VariableMask::without(Variable::Age)).is_ok());
}

proptest! {
    #[test]
    fn residuals_are_orthogonal_to_the_design(seed in 0u64..10_000, n in 8usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, n);
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.x.to_vec()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.daae).collect();
        let beta = least_squares(&x, &y).unwrap();
        for k in 0..N_VARIABLES {
            let dot: f64 = x
                .iter()
                .zip(&y)
                .map(|(r, yi)| r[k] * (yi - r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()))
                .sum();
            prop_assert!(dot.abs() < 1e-8, "column {} dot {}", k, dot);
        }
    }

    #[test]
    fn masked_variables_get_zero(seed in 0u64..10_000, drop in 0usize..N_VARIABLES) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, 50);
        let mut mask = VariableMask::default();
        mask.0[drop] = false;
        let model = fit_period(quarter(), &rows, mask).unwrap();
        prop_assert_eq!(model.beta[drop], 0.0);
    }
}
