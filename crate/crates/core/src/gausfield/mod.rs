//! Stationary Gaussian random fields with Matern correlation on the pixel
//! lattice.
//!
//! Fields are mean zero with unit marginal variance by default. Simulation
//! uses circulant embedding on an enlarged torus (exact in distribution when
//! the embedding is nonnegative definite) and falls back to dense Cholesky
//! otherwise. Draws are reproducible: identical `(grid, spec, seed)` give
//! bitwise-identical samples regardless of thread schedule.

mod bessel;

pub use bessel::bessel_k;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::rng::{derive_seed, rng_from_seed};

/// Matern correlation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternSpec {
    range: f64,
    smoothness: f64,
    variance: f64,
}

impl MaternSpec {
    /// Unit-variance Matern spec with range `rho` and smoothness `nu`.
    pub fn new(range: f64, smoothness: f64) -> Result<Self> {
        Self::with_variance(range, smoothness, 1.0)
    }

    pub fn with_variance(range: f64, smoothness: f64, variance: f64) -> Result<Self> {
        if !(range > 0.0) || !range.is_finite() {
            return Err(Error::Config(format!("Matern range must be positive, got {range}")));
        }
        if !(smoothness > 0.0) || !smoothness.is_finite() {
            return Err(Error::Config(format!(
                "Matern smoothness must be positive, got {smoothness}"
            )));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::Config(format!(
                "Matern variance must be positive, got {variance}"
            )));
        }
        Ok(Self { range, smoothness, variance })
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Matern correlation at distance `d`.
///
/// Uses the scaling `x = sqrt(2 nu) d / rho`, under which the half-integer
/// smoothness cases reduce to `exp(-d/rho)` (nu = 1/2) and
/// `(1 + sqrt(3) d/rho) exp(-sqrt(3) d/rho)` (nu = 3/2).
pub fn matern_correlation(d: f64, spec: &MaternSpec) -> Result<f64> {
    if d < 0.0 || d.is_nan() {
        return Err(Error::Domain(format!("matern_correlation needs d >= 0, got {d}")));
    }
    if d == 0.0 {
        return Ok(1.0);
    }
    let nu = spec.smoothness;
    let x = (2.0 * nu).sqrt() * d / spec.range;
    if x > 700.0 {
        return Ok(0.0);
    }
    let value = 2.0_f64.powf(1.0 - nu) / gamma(nu) * x.powf(nu) * bessel_k(nu, x);
    // Tiny excursions above 1 can only come from roundoff at d ~ 0.
    Ok(value.clamp(0.0, 1.0))
}

/// One realization of the field over a grid, in pixel index order.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub spec: MaternSpec,
    pub seed: u64,
}

/// How the sampler factorizes the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMethod {
    /// Circulant embedding for larger grids, dense Cholesky for tiny ones,
    /// with automatic fallback when the embedding is not nonnegative definite.
    Auto,
    CirculantEmbedding,
    DenseCholesky,
}

enum Prepared {
    Circulant {
        torus_rows: usize,
        torus_cols: usize,
        sqrt_eigenvalues: Vec<f64>,
    },
    Dense {
        factor: DMatrix<f64>,
    },
}

/// A field sampler with the covariance factorization precomputed, so many
/// draws over the same grid amortize the setup cost.
pub struct FieldSampler {
    grid: Grid,
    spec: MaternSpec,
    prepared: Prepared,
}

const MAX_EMBEDDING_DOUBLINGS: usize = 3;
const DENSE_PIXEL_LIMIT: usize = 4096;
const FIELD_DRAW_SALT: u64 = 0x6669_656c_64; // "field"

impl FieldSampler {
    pub fn new(grid: &Grid, spec: MaternSpec) -> Result<Self> {
        Self::with_method(grid, spec, SamplingMethod::Auto)
    }

    pub fn with_method(grid: &Grid, spec: MaternSpec, method: SamplingMethod) -> Result<Self> {
        let prepared = match method {
            SamplingMethod::DenseCholesky => prepare_dense(grid, &spec)?,
            SamplingMethod::CirculantEmbedding => prepare_circulant(grid, &spec)?,
            SamplingMethod::Auto => {
                if grid.n_pixels() <= 32 {
                    prepare_dense(grid, &spec)?
                } else {
                    match prepare_circulant(grid, &spec) {
                        Ok(p) => p,
                        Err(embed_err) => {
                            if grid.n_pixels() > DENSE_PIXEL_LIMIT {
                                return Err(embed_err);
                            }
                            log::warn!("circulant embedding failed ({embed_err}); using dense Cholesky");
                            prepare_dense(grid, &spec)?
                        }
                    }
                }
            }
        };
        Ok(Self { grid: grid.clone(), spec, prepared })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Draw one field realization. Each seed is an independent stream.
    pub fn draw(&self, seed: u64) -> FieldSample {
        let mut rng = rng_from_seed(derive_seed(seed, &[FIELD_DRAW_SALT]));
        let sd = self.spec.variance.sqrt();
        let values = match &self.prepared {
            Prepared::Dense { factor } => {
                let n = self.grid.n_pixels();
                let z: Vec<f64> =
                    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut out = vec![0.0; n];
                // Lower-triangular multiply.
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += factor[(i, j)] * z[j];
                    }
                    out[i] = sd * acc;
                }
                out
            }
            Prepared::Circulant { torus_rows, torus_cols, sqrt_eigenvalues } => {
                let (m1, m2) = (*torus_rows, *torus_cols);
                let total = m1 * m2;
                let mut spectrum = vec![Complex::new(0.0, 0.0); total];
                for (slot, &root) in spectrum.iter_mut().zip(sqrt_eigenvalues.iter()) {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *slot = Complex::new(root * re, root * im);
                }
                fft2_in_place(&mut spectrum, m1, m2, true);
                let norm = 1.0 / (total as f64).sqrt();
                let mut out = Vec::with_capacity(self.grid.n_pixels());
                for r in 0..self.grid.m_rows() {
                    for c in 0..self.grid.m_cols() {
                        out.push(sd * norm * spectrum[r * m2 + c].re);
                    }
                }
                out
            }
        };
        FieldSample { values, spec: self.spec, seed }
    }
}

/// Draw a single field: convenience over [`FieldSampler`].
pub fn sample_field(grid: &Grid, spec: MaternSpec, seed: u64) -> Result<FieldSample> {
    Ok(FieldSampler::new(grid, spec)?.draw(seed))
}

/// Draw `count` independent fields under per-field sub-seeds.
pub fn sample_covariates(
    grid: &Grid,
    spec: MaternSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<FieldSample>> {
    if count == 0 {
        return Err(Error::Config("covariate count must be at least 1".into()));
    }
    let sampler = FieldSampler::new(grid, spec)?;
    Ok((0..count)
        .map(|j| sampler.draw(derive_seed(seed, &[j as u64])))
        .collect())
}

fn prepare_dense(grid: &Grid, spec: &MaternSpec) -> Result<Prepared> {
    let n = grid.n_pixels();
    if n > DENSE_PIXEL_LIMIT {
        return Err(Error::Numerical(format!(
            "dense Cholesky limited to {DENSE_PIXEL_LIMIT} pixels, grid has {n}"
        )));
    }
    let coords = grid.coords();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let d = ((coords[i].0 - coords[j].0).powi(2) + (coords[i].1 - coords[j].1).powi(2))
                .sqrt();
            let c = matern_correlation(d, spec)?;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    // Jitter escalation: correlation matrices of very smooth fields are often
    // numerically semidefinite.
    let mut jitter = 0.0;
    for _ in 0..6 {
        let mut attempt = cov.clone();
        for i in 0..n {
            attempt[(i, i)] += jitter;
        }
        if let Some(chol) = attempt.cholesky() {
            return Ok(Prepared::Dense { factor: chol.unpack() });
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
    }
    Err(Error::Numerical(format!(
        "Cholesky failed for Matern(range={}, smoothness={}) on {n} pixels even with jitter {jitter:e}",
        spec.range, spec.smoothness
    )))
}

fn prepare_circulant(grid: &Grid, spec: &MaternSpec) -> Result<Prepared> {
    let h = grid.spacing();
    let mut torus_rows = (2 * grid.m_rows()).next_power_of_two().max(2);
    let mut torus_cols = (2 * grid.m_cols()).next_power_of_two().max(2);
    let mut last_min_eig = f64::NAN;
    for _ in 0..=MAX_EMBEDDING_DOUBLINGS {
        let (m1, m2) = (torus_rows, torus_cols);
        let mut base = vec![Complex::new(0.0, 0.0); m1 * m2];
        for p in 0..m1 {
            let wrap_p = p.min(m1 - p) as f64;
            for q in 0..m2 {
                let wrap_q = q.min(m2 - q) as f64;
                let d = h * (wrap_p * wrap_p + wrap_q * wrap_q).sqrt();
                base[p * m2 + q] = Complex::new(matern_correlation(d, spec)?, 0.0);
            }
        }
        fft2_in_place(&mut base, m1, m2, false);
        let max_eig = base.iter().map(|c| c.re).fold(f64::MIN, f64::max);
        let min_eig = base.iter().map(|c| c.re).fold(f64::MAX, f64::min);
        last_min_eig = min_eig;
        if min_eig >= -1e-9 * max_eig.abs() {
            let sqrt_eigenvalues = base.iter().map(|c| c.re.max(0.0).sqrt()).collect();
            return Ok(Prepared::Circulant { torus_rows: m1, torus_cols: m2, sqrt_eigenvalues });
        }
        torus_rows *= 2;
        torus_cols *= 2;
    }
    Err(Error::Numerical(format!(
        "circulant embedding not nonnegative definite up to {torus_rows}x{torus_cols} torus \
         (min eigenvalue {last_min_eig:e})"
    )))
}

/// In-place 2D FFT over a row-major `m1 x m2` complex buffer. The inverse
/// transform is unnormalized, matching the usual FFT convention.
fn fft2_in_place(data: &mut [Complex<f64>], m1: usize, m2: usize, inverse: bool) {
    debug_assert_eq!(data.len(), m1 * m2);
    let mut planner = FftPlanner::new();
    let row_fft = if inverse { planner.plan_fft_inverse(m2) } else { planner.plan_fft_forward(m2) };
    for r in 0..m1 {
        row_fft.process(&mut data[r * m2..(r + 1) * m2]);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(m1) } else { planner.plan_fft_forward(m1) };
    let mut column = vec![Complex::new(0.0, 0.0); m1];
    for c in 0..m2 {
        for r in 0..m1 {
            column[r] = data[r * m2 + c];
        }
        col_fft.process(&mut column);
        for r in 0..m1 {
            data[r * m2 + c] = column[r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_at_zero_distance_is_one() {
        let spec = MaternSpec::new(0.3, 2.0).unwrap();
        assert_eq!(matern_correlation(0.0, &spec).unwrap(), 1.0);
    }

    #[test]
    fn matern_half_integer_closed_forms() {
        // nu = 1/2: exp(-d/rho)
        let spec = MaternSpec::new(0.3, 0.5).unwrap();
        let got = matern_correlation(0.3, &spec).unwrap();
        assert!((got - (-1.0_f64).exp()).abs() / (-1.0_f64).exp() < 1e-10);

        // nu = 3/2: (1 + sqrt(3) d/rho) exp(-sqrt(3) d/rho)
        let spec = MaternSpec::new(1.0, 1.5).unwrap();
        let got = matern_correlation(1.0, &spec).unwrap();
        let expected = (1.0 + 3.0_f64.sqrt()) * (-(3.0_f64.sqrt())).exp();
        assert!((got - expected).abs() / expected < 1e-10);

        // nu = 5/2: (1 + sqrt(5) x + 5 x^2 / 3) exp(-sqrt(5) x)
        let spec = MaternSpec::new(1.0, 2.5).unwrap();
        let x: f64 = 0.4;
        let got = matern_correlation(x, &spec).unwrap();
        let expected = (1.0 + 5.0_f64.sqrt() * x + 5.0 * x * x / 3.0) * (-(5.0_f64.sqrt()) * x).exp();
        assert!((got - expected).abs() / expected < 1e-10);
    }

    #[test]
    fn matern_nonincreasing_in_distance() {
        let spec = MaternSpec::new(0.3, 2.0).unwrap();
        let mut prev = 1.0;
        for k in 1..=200 {
            let v = matern_correlation(k as f64 * 0.01, &spec).unwrap();
            assert!(v <= prev + 1e-12);
            assert!(v > 0.0 && v <= 1.0);
            prev = v;
        }
    }

    #[test]
    fn matern_rejects_bad_inputs() {
        assert!(MaternSpec::new(0.0, 1.0).is_err());
        assert!(MaternSpec::new(1.0, -1.0).is_err());
        let spec = MaternSpec::new(1.0, 1.0).unwrap();
        assert!(matern_correlation(-0.1, &spec).is_err());
    }

    #[test]
    fn single_pixel_grid_draws_standard_normal() {
        let grid = Grid::new(1, 1, 1.0, (0.0, 0.0)).unwrap();
        let spec = MaternSpec::new(0.3, 2.0).unwrap();
        let n_reps = 4000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for rep in 0..n_reps {
            let s = sample_field(&grid, spec, rep as u64).unwrap();
            assert_eq!(s.values.len(), 1);
            sum += s.values[0];
            sum_sq += s.values[0] * s.values[0];
        }
        let mean = sum / n_reps as f64;
        let var = sum_sq / n_reps as f64 - mean * mean;
        assert!(mean.abs() < 0.06, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn draws_are_reproducible_and_seed_sensitive() {
        let grid = Grid::unit_square(8).unwrap();
        let spec = MaternSpec::new(0.3, 1.0).unwrap();
        let a = sample_field(&grid, spec, 7).unwrap();
        let b = sample_field(&grid, spec, 7).unwrap();
        let c = sample_field(&grid, spec, 8).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn field_marginals_match_over_replicates() {
        let grid = Grid::unit_square(32).unwrap();
        let spec = MaternSpec::new(0.3, 2.0).unwrap();
        let sampler = FieldSampler::new(&grid, spec).unwrap();
        let n_reps = 200;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for rep in 0..n_reps {
            let s = sampler.draw(derive_seed(11, &[rep]));
            for v in &s.values {
                sum += v;
                sum_sq += v * v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sum_sq / count as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "pooled mean {mean}");
        assert!((0.9..=1.1).contains(&var), "pooled variance {var}");
    }

    #[test]
    fn empirical_lag_correlation_matches_matern() {
        let grid = Grid::unit_square(32).unwrap();
        let spec = MaternSpec::new(0.3, 2.0).unwrap();
        let sampler = FieldSampler::new(&grid, spec).unwrap();
        // Horizontal lag of 9 pixels is as close to distance rho as the
        // lattice allows.
        let lag = 9usize;
        let lag_dist = lag as f64 * grid.spacing();
        let expected = matern_correlation(lag_dist, &spec).unwrap();
        let n_reps = 200;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for rep in 0..n_reps {
            let s = sampler.draw(derive_seed(23, &[rep]));
            for r in 0..32 {
                for c in 0..(32 - lag) {
                    let a = s.values[grid.index_of(r, c)];
                    let b = s.values[grid.index_of(r, c + lag)];
                    sxy += a * b;
                    sxx += a * a;
                    syy += b * b;
                }
            }
        }
        let corr = sxy / (sxx.sqrt() * syy.sqrt());
        assert!(
            (corr - expected).abs() < 0.1,
            "lag-{lag} correlation {corr} vs Matern {expected}"
        );
    }

    #[test]
    fn covariate_fields_are_independent() {
        let grid = Grid::unit_square(16).unwrap();
        let spec = MaternSpec::new(0.3, 1.0).unwrap();
        let n_reps = 200;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for rep in 0..n_reps {
            let fields = sample_covariates(&grid, spec, 5, derive_seed(3, &[rep])).unwrap();
            for (a, b) in fields[0].values.iter().zip(fields[3].values.iter()) {
                sxy += a * b;
                sxx += a * a;
                syy += b * b;
            }
        }
        let corr = sxy / (sxx.sqrt() * syy.sqrt());
        assert!(corr.abs() < 0.1, "cross-field correlation {corr}");
    }

    #[test]
    fn single_covariate_matches_sample_field_sub_seed() {
        let grid = Grid::unit_square(8).unwrap();
        let spec = MaternSpec::new(0.3, 1.0).unwrap();
        let fields = sample_covariates(&grid, spec, 1, 99).unwrap();
        let direct = FieldSampler::new(&grid, spec).unwrap().draw(derive_seed(99, &[0]));
        assert_eq!(fields[0].values, direct.values);
    }

    #[test]
    fn dense_and_circulant_paths_agree_in_distribution() {
        let grid = Grid::unit_square(8).unwrap();
        let spec = MaternSpec::new(0.3, 2.0).unwrap();
        let n = grid.n_pixels();
        let circulant =
            FieldSampler::with_method(&grid, spec, SamplingMethod::CirculantEmbedding).unwrap();
        let dense = FieldSampler::with_method(&grid, spec, SamplingMethod::DenseCholesky).unwrap();

        let n_reps = 2000;
        let empirical_cov = |sampler: &FieldSampler, salt: u64| -> Vec<f64> {
            let mut acc = vec![0.0; n * n];
            for rep in 0..n_reps {
                let s = sampler.draw(derive_seed(salt, &[rep]));
                for i in 0..n {
                    for j in 0..n {
                        acc[i * n + j] += s.values[i] * s.values[j];
                    }
                }
            }
            acc.iter_mut().for_each(|v| *v /= n_reps as f64);
            acc
        };
        let cov_c = empirical_cov(&circulant, 101);
        let cov_d = empirical_cov(&dense, 202);

        let coords = grid.coords();
        let mut truth_norm_sq = 0.0;
        let mut diff_norm_sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = ((coords[i].0 - coords[j].0).powi(2)
                    + (coords[i].1 - coords[j].1).powi(2))
                .sqrt();
                let truth = matern_correlation(d, &spec).unwrap();
                truth_norm_sq += truth * truth;
                let diff = cov_c[i * n + j] - cov_d[i * n + j];
                diff_norm_sq += diff * diff;
            }
        }
        let rel = (diff_norm_sq / truth_norm_sq).sqrt();
        assert!(rel < 0.15, "Frobenius relative error {rel}");
    }
}
