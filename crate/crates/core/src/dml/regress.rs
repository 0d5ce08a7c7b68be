//! Least-squares machinery shared by the second stage and the baselines:
//! QR solve, HC0 sandwich covariance, and the effect-estimate record.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Normal critical value for 95% intervals.
pub const Z_CRIT_95: f64 = 1.959964;

/// Relative tolerance on R's diagonal for declaring a column collinear.
const RANK_TOL: f64 = 1e-8;

/// A fitted treatment-effect estimate with robust covariance.
#[derive(Debug, Clone)]
pub struct EffectEstimate {
    pub method: String,
    pub coefficient_names: Vec<String>,
    pub theta: Vec<f64>,
    /// HC0 sandwich covariance of theta, symmetric PSD.
    pub covariance: DMatrix<f64>,
    pub gamma: f64,
    pub gamma_se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n_rows: usize,
    /// Run provenance as ordered key-value pairs.
    pub metadata: Vec<(String, String)>,
}

impl EffectEstimate {
    pub fn ci_contains(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }

    pub fn ci_length(&self) -> f64 {
        self.ci_upper - self.ci_lower
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficient_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.theta[i])
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.to_string(), value.to_string()));
    }
}

#[derive(Debug)]
pub struct RobustFit {
    pub theta: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub n_rows: usize,
}

/// Least squares by thin QR with an HC0 sandwich covariance.
///
/// Columns that are exactly zero are pinned to coefficient 0 with zero
/// covariance (they carry no information but are not an identification
/// failure). Any other rank deficiency is an error naming the columns whose
/// R-diagonal collapsed.
pub fn robust_least_squares(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
) -> Result<RobustFit> {
    let n = z.nrows();
    let k_all = z.ncols();
    debug_assert_eq!(names.len(), k_all);
    if n < k_all {
        return Err(Error::Config(format!("{n} rows cannot identify {k_all} coefficients")));
    }

    let active: Vec<usize> = (0..k_all)
        .filter(|&j| z.column(j).iter().any(|&v| v != 0.0))
        .collect();
    let za = if active.len() == k_all {
        z.clone()
    } else {
        DMatrix::from_fn(n, active.len(), |i, jj| z[(i, active[jj])])
    };
    let k = za.ncols();

    let qr = za.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let collinear: Vec<String> = (0..k)
        .filter(|&j| r[(j, j)].abs() <= RANK_TOL * max_diag)
        .map(|j| names[active[j]].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(Error::Singular { columns: collinear });
    }

    let q = qr.q();
    let qty = q.transpose() * y;
    let theta_active = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("upper-triangular solve failed".into()))?;

    // Bread (Z'Z)^-1 = R^-1 R^-T.
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Numerical("R inversion failed".into()))?;
    let bread = &r_inv * r_inv.transpose();

    // Meat: sum of e_i^2 z_i z_i'.
    let fitted = &za * &theta_active;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let e2 = (y[i] - fitted[i]).powi(2);
        for a in 0..k {
            let w = e2 * za[(i, a)];
            for b in 0..k {
                meat[(a, b)] += w * za[(i, b)];
            }
        }
    }
    let cov_active = &bread * meat * &bread;

    // Scatter back into full-size outputs.
    let mut theta = vec![0.0; k_all];
    let mut covariance = DMatrix::zeros(k_all, k_all);
    for (jj, &j) in active.iter().enumerate() {
        theta[j] = theta_active[jj];
        for (bb, &b) in active.iter().enumerate() {
            covariance[(j, b)] = cov_active[(jj, bb)];
        }
    }

    Ok(RobustFit { theta, covariance, n_rows: n })
}

/// Package a robust fit into an estimate keyed on the gamma column.
pub fn estimate_from_fit(
    method: &str,
    fit: RobustFit,
    names: Vec<String>,
    gamma_index: usize,
) -> EffectEstimate {
    let gamma = fit.theta[gamma_index];
    let gamma_se = fit.covariance[(gamma_index, gamma_index)].max(0.0).sqrt();
    EffectEstimate {
        method: method.to_string(),
        coefficient_names: names,
        theta: fit.theta,
        covariance: fit.covariance,
        gamma,
        gamma_se,
        ci_lower: gamma - Z_CRIT_95 * gamma_se,
        ci_upper: gamma + Z_CRIT_95 * gamma_se,
        n_rows: fit.n_rows,
        metadata: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    /// Test-only brute-force solver: normal equations by Gauss-Jordan,
    /// independent of the QR path it checks.
    pub(super) fn gauss_jordan_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
        let k = b.len();
        let mut m: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut row = a[i].clone();
                row.push(b[i]);
                row
            })
            .collect();
        for col in 0..k {
            let pivot = (col..k).max_by(|&i, &j| {
                m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
            })?;
            if m[pivot][col].abs() < 1e-12 {
                return None;
            }
            m.swap(col, pivot);
            let p = m[col][col];
            for v in &mut m[col] {
                *v /= p;
            }
            for row in 0..k {
                if row != col {
                    let factor = m[row][col];
                    for j in 0..=k {
                        m[row][j] -= factor * m[col][j];
                    }
                }
            }
        }
        Some(m.iter().map(|row| row[k]).collect())
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("c{j}")).collect()
    }

    #[test]
    fn exact_linear_system_recovers_coefficients_with_zero_covariance() {
        // 6 rows, 3 columns, response built as an exact combination.
        let z = DMatrix::from_row_slice(
            6,
            3,
            &[
                1.0, 0.0, 2.0, //
                1.0, 1.0, 0.5, //
                1.0, 2.0, -1.0, //
                1.0, 3.0, 4.0, //
                1.0, 4.0, 2.0, //
                1.0, 5.0, -3.0,
            ],
        );
        let truth = [2.0, -1.5, 0.25];
        let y = DVector::from_fn(6, |i, _| {
            truth[0] * z[(i, 0)] + truth[1] * z[(i, 1)] + truth[2] * z[(i, 2)]
        });
        let fit = robust_least_squares(&z, &y, &names(3)).unwrap();
        for (got, want) in fit.theta.iter().zip(truth.iter()) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!(fit.covariance.iter().all(|v| v.abs() < 1e-18));
    }

    #[test]
    fn matches_brute_force_normal_equations_and_sandwich() {
        let mut rng = rng_from_seed(77);
        let n = 60;
        let k = 5;
        let z = DMatrix::from_fn(n, k, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random::<f64>() * 2.0 - 1.0
            }
        });
        let y = DVector::from_fn(n, |i, _| {
            z.row(i).iter().sum::<f64>() + rng.random::<f64>()
        });
        let fit = robust_least_squares(&z, &y, &names(k)).unwrap();

        // Brute force: theta = (Z'Z)^{-1} Z'y by Gauss-Jordan.
        let ztz: Vec<Vec<f64>> = (0..k)
            .map(|a| (0..k).map(|b| z.column(a).dot(&z.column(b))).collect())
            .collect();
        let zty: Vec<f64> = (0..k).map(|a| z.column(a).dot(&y)).collect();
        let theta_bf = gauss_jordan_solve(&ztz, &zty).unwrap();
        for (got, want) in fit.theta.iter().zip(theta_bf.iter()) {
            assert!(
                (got - want).abs() / want.abs().max(1.0) < 1e-10,
                "{got} vs {want}"
            );
        }

        // Brute-force sandwich assembled entry by entry.
        let mut resid = vec![0.0; n];
        for i in 0..n {
            let fit_i: f64 = (0..k).map(|j| z[(i, j)] * theta_bf[j]).sum();
            resid[i] = y[i] - fit_i;
        }
        let mut meat = vec![vec![0.0; k]; k];
        for i in 0..n {
            for a in 0..k {
                for b in 0..k {
                    meat[a][b] += resid[i] * resid[i] * z[(i, a)] * z[(i, b)];
                }
            }
        }
        // bread by solving Z'Z X = I column by column
        let mut bread = vec![vec![0.0; k]; k];
        for col in 0..k {
            let mut e = vec![0.0; k];
            e[col] = 1.0;
            let x = gauss_jordan_solve(&ztz, &e).unwrap();
            for row in 0..k {
                bread[row][col] = x[row];
            }
        }
        for a in 0..k {
            for b in 0..k {
                let mut want = 0.0;
                for u in 0..k {
                    for v in 0..k {
                        want += bread[a][u] * meat[u][v] * bread[v][b];
                    }
                }
                let got = fit.covariance[(a, b)];
                assert!(
                    (got - want).abs() / want.abs().max(1e-12) < 1e-10,
                    "cov[{a}][{b}]: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn collinear_columns_are_named() {
        let mut rng = rng_from_seed(5);
        let n = 20;
        let mut z = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
        for i in 0..n {
            z[(i, 2)] = 2.0 * z[(i, 0)] + z[(i, 1)];
        }
        let y = DVector::from_fn(n, |i, _| z[(i, 0)] + rng.random::<f64>());
        let err = robust_least_squares(
            &z,
            &y,
            &["a".into(), "b".into(), "ab_combo".into()],
        )
        .unwrap_err();
        match err {
            Error::Singular { columns } => assert_eq!(columns, vec!["ab_combo".to_string()]),
            other => panic!("expected singular error, got {other}"),
        }
    }

    #[test]
    fn all_zero_columns_are_pinned_to_zero() {
        let mut rng = rng_from_seed(6);
        let n = 25;
        let z = DMatrix::from_fn(n, 3, |_, j| if j == 1 { 0.0 } else { rng.random::<f64>() });
        let y = DVector::from_fn(n, |i, _| z[(i, 0)] * 2.0 + 0.1 * rng.random::<f64>());
        let fit = robust_least_squares(&z, &y, &names(3)).unwrap();
        assert_eq!(fit.theta[1], 0.0);
        assert!(fit.covariance.row(1).iter().all(|&v| v == 0.0));
        assert!(fit.covariance.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hc0_covariance_is_psd_on_random_inputs() {
        let mut rng = rng_from_seed(42);
        for trial in 0..50 {
            let n = 30 + (trial % 7);
            let k = 4;
            let z = DMatrix::from_fn(n, k, |_, j| {
                if j == 0 {
                    1.0
                } else {
                    rng.random::<f64>() * 4.0 - 2.0
                }
            });
            let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 10.0 - 5.0);
            let fit = robust_least_squares(&z, &y, &names(k)).unwrap();
            let eig = fit.covariance.clone().symmetric_eigen();
            assert!(
                eig.eigenvalues.iter().all(|&l| l >= -1e-10),
                "trial {trial}: eigenvalues {:?}",
                eig.eigenvalues
            );
        }
    }
}
