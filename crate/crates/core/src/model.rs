//! Per-quarter linear model of normalized absolute error, fitted by least
//! squares without an intercept, and its one-quarter-ahead predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::Quarter;
use crate::features::{NormalizedRow, Variable, N_VARIABLES};

/// Diagonal floor added to the normal matrix, relative to each column's
/// own squared norm.
pub const RIDGE_FLOOR: f64 = 1e-10;

/// Which regressors take part in the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableMask(pub [bool; N_VARIABLES]);

impl Default for VariableMask {
    fn default() -> Self {
        VariableMask([true; N_VARIABLES])
    }
}

impl VariableMask {
    pub fn without(variable: Variable) -> Self {
        let mut m = [true; N_VARIABLES];
        m[variable.index()] = false;
        VariableMask(m)
    }

    pub fn active(&self) -> Vec<usize> {
        (0..N_VARIABLES).filter(|&k| self.0[k]).collect()
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodModel {
    pub period: Quarter,
    /// Coefficients in [`Variable::ALL`] order; masked-out entries are 0.
    pub beta: [f64; N_VARIABLES],
    pub n_obs: usize,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitError {
    #[error("{n_obs} observations for {required} active variables")]
    InsufficientObservations { n_obs: usize, required: usize },
    #[error("no active variables")]
    EmptyMask,
    #[error("normal matrix not positive definite")]
    Singular,
}

/// Least-squares fit of `daae` on the active regressors of `rows`.
pub fn fit_period(
    period: Quarter,
    rows: &[NormalizedRow],
    mask: VariableMask,
) -> Result<PeriodModel, FitError> {
    let active = mask.active();
    if active.is_empty() {
        return Err(FitError::EmptyMask);
    }
    if rows.len() < active.len() {
        return Err(FitError::InsufficientObservations {
            n_obs: rows.len(),
            required: active.len(),
        });
    }
    let design: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| active.iter().map(|&k| r.x[k]).collect())
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r.daae).collect();
    let coef = least_squares(&design, &y)?;

    let mut beta = [0.0; N_VARIABLES];
    for (c, &k) in coef.iter().zip(&active) {
        beta[k] = *c;
    }
    let rss = rows
        .iter()
        .map(|r| {
            let e = r.daae - predict_with(&beta, r);
            e * e
        })
        .sum();
    Ok(PeriodModel {
        period,
        beta,
        n_obs: rows.len(),
        rss,
    })
}

fn predict_with(beta: &[f64; N_VARIABLES], row: &NormalizedRow) -> f64 {
    beta.iter().zip(&row.x).map(|(b, x)| b * x).sum()
}

/// Predicted normalized error of `row` under a previous quarter's model.
pub fn predict_daae(model: &PeriodModel, row: &NormalizedRow) -> f64 {
    predict_with(&model.beta, row)
}

/// Solves min ||X b - y||^2 through the normal equations with a small
/// diagonal floor, which keeps collinear designs solvable and selects the
/// (near) minimum-norm solution for them.
pub fn least_squares(design: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, FitError> {
    let p = design.first().map_or(0, Vec::len);
    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for (row, &yi) in design.iter().zip(y) {
        for a in 0..p {
            rhs[a] += row[a] * yi;
            for b in 0..=a {
                gram[a][b] += row[a] * row[b];
            }
        }
    }
    // Each column is floored relative to its own squared norm, which keeps
    // the solution equivariant under rescaling of any column or of `y`.
    // An all-zero column gets an absolute floor; its coefficient is 0 either way.
    let fallback = (0..p).map(|k| gram[k][k]).fold(1.0f64, f64::max);
    let mut factor = gram.clone();
    for (k, row) in factor.iter_mut().enumerate() {
        let d = row[k];
        row[k] += RIDGE_FLOOR * if d > 0.0 { d } else { fallback };
    }
    cholesky(&mut factor)?;
    let mut x = cholesky_solve(&factor, &rhs);
    // Refinement against the unfloored system removes the floor's bias on
    // well-posed fits. On collinear columns any drift lies in the null space
    // of the design, so fitted values are unaffected.
    for _ in 0..REFINEMENT_STEPS {
        let resid: Vec<f64> = (0..p)
            .map(|a| {
                let gx: f64 = (0..p)
                    .map(|b| if b <= a { gram[a][b] } else { gram[b][a] } * x[b])
                    .sum();
                rhs[a] - gx
            })
            .collect();
        let dx = cholesky_solve(&factor, &resid);
        for (v, d) in x.iter_mut().zip(dx) {
            *v += d;
        }
    }
    Ok(x)
}

const REFINEMENT_STEPS: usize = 2;

/// In-place Cholesky factorization of the lower triangle of `a`.
fn cholesky(a: &mut [Vec<f64>]) -> Result<(), FitError> {
    let n = a.len();
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| a[j][k] * a[j][k]).sum::<f64>();
        if d <= 0.0 || !d.is_finite() {
            return Err(FitError::Singular);
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let s = a[i][j] - (0..j).map(|k| a[i][k] * a[j][k]).sum::<f64>();
            a[i][j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` for a factor produced by [`cholesky`].
fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> Quarter {
        Quarter::new(2012, 1).unwrap()
    }

    fn row(x: [f64; 6], daae: f64) -> NormalizedRow {
        NormalizedRow { x, daae }
    }

    #[test]
    fn exact_single_variable_fit() {
        let rows: Vec<_> = (0..20)
            .map(|i| {
                let age = (i as f64 - 9.5) / 10.0;
                row([age, 0.0, 0.0, 0.0, 0.0, 0.0], 0.3 * age)
            })
            .collect();
        let m = fit_period(q(), &rows, VariableMask::default()).unwrap();
        assert!((m.beta[0] - 0.3).abs() < 1e-9);
        assert!(m.beta[1..].iter().all(|b| b.abs() < 1e-12));
        assert!(m.rss < 1e-18);
        assert_eq!(m.n_obs, 20);
    }

    #[test]
    fn masked_coefficients_are_exactly_zero() {
        let rows: Vec<_> = (0..30)
            .map(|i| {
                let t = i as f64;
                row(
                    [
                        t.sin(),
                        t.cos(),
                        (2.0 * t).sin(),
                        0.5,
                        t / 30.0,
                        (t * 0.7).cos(),
                    ],
                    t.sin() - t.cos(),
                )
            })
            .collect();
        let mask = VariableMask::without(Variable::Freq);
        let m = fit_period(q(), &rows, mask).unwrap();
        assert_eq!(m.beta[Variable::Freq.index()], 0.0);
    }

    #[test]
    fn too_few_rows_is_model_less() {
        let rows = vec![row([1.0; 6], 1.0); 5];
        assert_eq!(
            fit_period(q(), &rows, VariableMask::default()),
            Err(FitError::InsufficientObservations {
                n_obs: 5,
                required: 6
            })
        );
        assert_eq!(
            fit_period(q(), &rows, VariableMask([false; 6])),
            Err(FitError::EmptyMask)
        );
    }

    #[test]
    fn all_zero_design_gives_zero_model() {
        let rows = vec![row([0.0; 6], 0.0); 12];
        let m = fit_period(q(), &rows, VariableMask::default()).unwrap();
        assert_eq!(m.beta, [0.0; 6]);
    }

    #[test]
    fn prediction_examples() {
        let zero = PeriodModel {
            period: q(),
            beta: [0.0; 6],
            n_obs: 10,
            rss: 0.0,
        };
        assert_eq!(
            predict_daae(&zero, &row([0.3, -1.0, 2.0, 0.1, 0.0, 5.0], 0.0)),
            0.0
        );
        let age_only = PeriodModel {
            beta: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ..zero.clone()
        };
        assert_eq!(
            predict_daae(&age_only, &row([-0.5, 3.0, 3.0, 3.0, 3.0, 3.0], 0.0)),
            -0.5
        );
    }
}
