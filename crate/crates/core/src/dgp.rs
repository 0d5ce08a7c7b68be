//! Simulation data-generating processes with known ground truth: pixel-level
//! treatment assignment and block-level (clustered) assignment.
//!
//! Both designs draw five independent mean-zero, unit-variance Matern fields
//! as covariates; only the first three are exposed to the analysis, so the
//! remaining two act as spatially smooth unobserved confounders entering
//! both the treatment and the outcome.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dml::GridDataset;
use crate::error::{Error, Result};
use crate::gausfield::{sample_covariates, MaternSpec};
use crate::lattice::{BlockPartition, Grid};
use crate::rng::{derive_seed, rng_from_seed};

/// Treatment-model mean: `sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5`.
pub fn h1(x: &[f64; 5]) -> f64 {
    (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3]
        + 5.0 * x[4]
}

/// Outcome-model mean: `x1 + t x1 + 3 x4 + 5 t x5 + gamma t d`. The `t`
/// interactions make the untreated trends depend on covariates, which is
/// what defeats the parallel-trends baselines.
pub fn h2(t: f64, x: &[f64; 5], d: f64, gamma: f64) -> f64 {
    x[0] + t * x[0] + 3.0 * x[3] + 5.0 * t * x[4] + gamma * t * d
}

fn expit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

const N_FIELDS: usize = 5;

/// Pixel-level design parameters.
#[derive(Debug, Clone)]
pub struct PixelSimConfig {
    pub m: usize,
    pub rho: f64,
    pub nu: f64,
    pub sigma2: f64,
    pub gamma: f64,
    /// How many of the five covariates the analysis sees.
    pub n_observed: usize,
    pub missing_frac: f64,
    /// Divides the treatment logit; 1 reproduces the design verbatim.
    pub logit_temperature: f64,
    pub seed: u64,
}

impl PixelSimConfig {
    pub fn new(nu: f64, seed: u64) -> Self {
        Self {
            m: 32,
            rho: 0.3,
            nu,
            sigma2: 1.0,
            gamma: 3.0,
            n_observed: 3,
            missing_frac: 0.20,
            logit_temperature: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config("grid side must be at least 2".into()));
        }
        if !(self.sigma2 >= 0.0) || !(self.logit_temperature > 0.0) {
            return Err(Error::Config("sigma2 must be >= 0 and temperature > 0".into()));
        }
        if self.n_observed == 0 || self.n_observed > N_FIELDS {
            return Err(Error::Config(format!(
                "n_observed must be in 1..={N_FIELDS}, got {}",
                self.n_observed
            )));
        }
        if !(0.0..1.0).contains(&self.missing_frac) {
            return Err(Error::Config("missing_frac must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// Block-level design parameters.
#[derive(Debug, Clone)]
pub struct BlockSimConfig {
    pub m: usize,
    pub rho: f64,
    pub nu: f64,
    pub sigma2: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub n_observed: usize,
    pub block_side: usize,
    pub logit_temperature: f64,
    pub seed: u64,
}

impl BlockSimConfig {
    pub fn new(nu: f64, seed: u64) -> Self {
        Self {
            m: 32,
            rho: 0.3,
            nu,
            sigma2: 0.25,
            tau2: 0.25,
            gamma: 3.0,
            n_observed: 3,
            block_side: 4,
            logit_temperature: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.block_side == 0 || self.m % self.block_side != 0 {
            return Err(Error::Config(format!(
                "grid side {} must divide into blocks of {}",
                self.m, self.block_side
            )));
        }
        if !(self.tau2 >= 0.0) || !(self.sigma2 >= 0.0) || !(self.logit_temperature > 0.0) {
            return Err(Error::Config("variances must be >= 0 and temperature > 0".into()));
        }
        if self.n_observed == 0 || self.n_observed > N_FIELDS {
            return Err(Error::Config(format!(
                "n_observed must be in 1..={N_FIELDS}, got {}",
                self.n_observed
            )));
        }
        Ok(())
    }
}

/// Ground truth accompanying a simulated dataset.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    pub gamma: f64,
    /// All five covariate fields, including the hidden ones.
    pub covariates: Array2<f64>,
    /// Treatment probability per pixel (per block member for the block
    /// design).
    pub treatment_prob: Vec<f64>,
    /// Block intercepts for the block design.
    pub alpha_blocks: Option<Vec<f64>>,
    /// How many times a degenerate all-0/all-1 treatment draw was retried.
    pub treatment_regenerations: u32,
}

fn draw_fields(grid: &Grid, rho: f64, nu: f64, seed: u64) -> Result<Array2<f64>> {
    let spec = MaternSpec::new(rho, nu)?;
    let fields = sample_covariates(grid, spec, N_FIELDS, seed)?;
    let n = grid.n_pixels();
    let mut covariates = Array2::zeros((n, N_FIELDS));
    for (j, field) in fields.iter().enumerate() {
        for (i, &v) in field.values.iter().enumerate() {
            covariates[(i, j)] = v;
        }
    }
    Ok(covariates)
}

fn covariate_row(covariates: &Array2<f64>, i: usize) -> [f64; 5] {
    [
        covariates[(i, 0)],
        covariates[(i, 1)],
        covariates[(i, 2)],
        covariates[(i, 3)],
        covariates[(i, 4)],
    ]
}

/// Bernoulli draws that are redrawn (with fresh sub-seeds) while the
/// realized vector is degenerate. Returns (draws, regeneration count).
fn bernoulli_nondegenerate(
    probs: &[f64],
    seed: u64,
) -> Result<(Vec<u8>, u32)> {
    const MAX_ATTEMPTS: u64 = 100;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_from_seed(derive_seed(seed, &[attempt]));
        let draws: Vec<u8> = probs.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect();
        let treated: usize = draws.iter().map(|&v| v as usize).sum();
        if treated > 0 && treated < draws.len() {
            if attempt > 0 {
                log::info!("treatment draw regenerated {attempt} time(s)");
            }
            return Ok((draws, attempt as u32));
        }
    }
    Err(Error::Degenerate(format!(
        "treatment stayed degenerate after {MAX_ATTEMPTS} draws"
    )))
}

fn observed_slice(covariates: &Array2<f64>, n_observed: usize) -> (Array2<f64>, Vec<String>) {
    let n = covariates.nrows();
    let x = Array2::from_shape_fn((n, n_observed), |(i, j)| covariates[(i, j)]);
    let names = (1..=n_observed).map(|j| format!("x{j}")).collect();
    (x, names)
}

/// Simulate the pixel-level design.
pub fn simulate_pixel(cfg: &PixelSimConfig) -> Result<(GridDataset, TruthRecord)> {
    cfg.validate()?;
    let grid = Grid::unit_square(cfg.m)?;
    let n = grid.n_pixels();
    let covariates = draw_fields(&grid, cfg.rho, cfg.nu, derive_seed(cfg.seed, &[0]))?;

    let probs: Vec<f64> = (0..n)
        .map(|i| expit(h1(&covariate_row(&covariates, i)) / cfg.logit_temperature))
        .collect();
    let (d, regenerations) = bernoulli_nondegenerate(&probs, derive_seed(cfg.seed, &[1]))?;

    let sigma = cfg.sigma2.sqrt();
    let mut noise_rng = rng_from_seed(derive_seed(cfg.seed, &[2]));
    let outcome = |t: f64, i: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let z: f64 = StandardNormal.sample(rng);
        h2(t, &covariate_row(&covariates, i), d[i] as f64, cfg.gamma) + sigma * z
    };
    let mut y0: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut y1: Vec<Option<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        y0.push(Some(outcome(0.0, i, &mut noise_rng)));
        y1.push(Some(outcome(1.0, i, &mut noise_rng)));
    }

    // Mask an exact fraction of the 2n outcome cells completely at random.
    let n_cells = 2 * n;
    let n_masked = (cfg.missing_frac * n_cells as f64).round() as usize;
    let mut cells: Vec<usize> = (0..n_cells).collect();
    use rand::seq::SliceRandom;
    cells.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, &[3])));
    for &cell in cells.iter().take(n_masked) {
        if cell < n {
            y0[cell] = None;
        } else {
            y1[cell - n] = None;
        }
    }

    let (x, names) = observed_slice(&covariates, cfg.n_observed);
    let data = GridDataset::new(grid, y0, y1, d, x, names, None)?;
    let truth = TruthRecord {
        gamma: cfg.gamma,
        covariates,
        treatment_prob: probs,
        alpha_blocks: None,
        treatment_regenerations: regenerations,
    };
    Ok((data, truth))
}

/// Simulate the block-level (clustered treatment) design.
pub fn simulate_block(cfg: &BlockSimConfig) -> Result<(GridDataset, TruthRecord)> {
    cfg.validate()?;
    let grid = Grid::unit_square(cfg.m)?;
    let n = grid.n_pixels();
    let covariates = draw_fields(&grid, cfg.rho, cfg.nu, derive_seed(cfg.seed, &[0]))?;
    let blocks = BlockPartition::tiles(&grid, cfg.block_side, cfg.block_side)?;
    let members = blocks.members();
    let n_blocks = blocks.n_blocks();

    // Block means of every covariate field drive the treatment assignment.
    let mut block_means = vec![[0.0; 5]; n_blocks];
    for (g, rows) in members.iter().enumerate() {
        for &i in rows {
            let row = covariate_row(&covariates, i);
            for (acc, v) in block_means[g].iter_mut().zip(row.iter()) {
                *acc += v;
            }
        }
        for acc in block_means[g].iter_mut() {
            *acc /= rows.len() as f64;
        }
    }
    let block_probs: Vec<f64> = block_means
        .iter()
        .map(|xb| expit(h1(xb) / cfg.logit_temperature))
        .collect();
    let (block_d, regenerations) =
        bernoulli_nondegenerate(&block_probs, derive_seed(cfg.seed, &[1]))?;
    let d: Vec<u8> = (0..n).map(|i| block_d[blocks.label_of(i)]).collect();
    let probs: Vec<f64> = (0..n).map(|i| block_probs[blocks.label_of(i)]).collect();

    // Shared-across-periods block intercepts.
    let tau = cfg.tau2.sqrt();
    let mut alpha_rng = rng_from_seed(derive_seed(cfg.seed, &[4]));
    let alpha: Vec<f64> = (0..n_blocks)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut alpha_rng);
            tau * z
        })
        .collect();

    let sigma = cfg.sigma2.sqrt();
    let mut noise_rng = rng_from_seed(derive_seed(cfg.seed, &[2]));
    let mut y0: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut y1: Vec<Option<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let a = alpha[blocks.label_of(i)];
        let x_row = covariate_row(&covariates, i);
        for (t, out) in [(0.0, &mut y0), (1.0, &mut y1)] {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            out.push(Some(a + h2(t, &x_row, d[i] as f64, cfg.gamma) + sigma * z));
        }
    }

    let (x, names) = observed_slice(&covariates, cfg.n_observed);
    let data = GridDataset::new(grid, y0, y1, d, x, names, Some(blocks))?;
    let truth = TruthRecord {
        gamma: cfg.gamma,
        covariates,
        treatment_prob: probs,
        alpha_blocks: Some(alpha),
        treatment_regenerations: regenerations,
    };
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn h1_hand_values() {
        assert_abs_diff_eq!(h1(&[0.0, 0.0, 0.5, 0.0, 0.0]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h1(&[1.0, 0.5, 0.5, 0.0, 0.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h1(&[0.0, 0.0, 0.0, 1.0, 1.0]), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn h2_hand_values() {
        assert_eq!(h2(0.0, &[0.0; 5], 1.0, 7.0), 0.0);
        assert_abs_diff_eq!(h2(1.0, &[1.0, 0.3, 0.9, 0.0, 0.0], 0.0, 3.0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h2(1.0, &[0.0; 5], 1.0, 3.0), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn pixel_sim_masks_the_exact_fraction() {
        let cfg = PixelSimConfig::new(2.0, 7);
        let (data, _) = simulate_pixel(&cfg).unwrap();
        let n = data.n_pixels();
        let missing =
            data.y0.iter().filter(|v| v.is_none()).count()
                + data.y1.iter().filter(|v| v.is_none()).count();
        assert_eq!(missing, (0.2 * (2 * n) as f64).round() as usize);
        assert_eq!(data.n_covariates(), 3);
    }

    #[test]
    fn pixel_sim_is_reproducible_and_nondegenerate() {
        let cfg = PixelSimConfig::new(1.0, 11);
        let (a, ta) = simulate_pixel(&cfg).unwrap();
        let (b, _) = simulate_pixel(&cfg).unwrap();
        assert_eq!(a.d, b.d);
        assert_eq!(a.y0, b.y0);
        let frac = a.treated_fraction();
        assert!(frac > 0.0 && frac < 1.0, "treated fraction {frac}");
        assert_eq!(ta.treatment_regenerations, 0);
    }

    #[test]
    fn block_sim_treatment_is_constant_within_blocks() {
        let cfg = BlockSimConfig::new(2.0, 3);
        let (data, truth) = simulate_block(&cfg).unwrap();
        let blocks = data.blocks.as_ref().unwrap();
        assert_eq!(blocks.n_blocks(), 64);
        for rows in blocks.members() {
            let first = data.d[rows[0]];
            assert!(rows.iter().all(|&i| data.d[i] == first));
        }
        assert_eq!(truth.alpha_blocks.as_ref().unwrap().len(), 64);
        assert_eq!(data.missing_fraction(0), 0.0);
        assert_eq!(data.missing_fraction(1), 0.0);
    }

    #[test]
    fn block_means_match_a_brute_force_loop() {
        let cfg = BlockSimConfig::new(1.0, 5);
        let (data, truth) = simulate_block(&cfg).unwrap();
        let blocks = data.blocks.as_ref().unwrap();
        // Recompute one block's mean for every field the slow way and make
        // sure the implied treatment probability matches.
        for g in [0usize, 17, 63] {
            let rows: Vec<usize> = (0..data.n_pixels())
                .filter(|&i| blocks.label_of(i) == g)
                .collect();
            let mut mean = [0.0; 5];
            for &i in &rows {
                for j in 0..5 {
                    mean[j] += truth.covariates[(i, j)];
                }
            }
            for m in mean.iter_mut() {
                *m /= rows.len() as f64;
            }
            let p = expit(h1(&mean));
            assert_abs_diff_eq!(p, truth.treatment_prob[rows[0]], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_block_variance_shifts_outcomes_by_alpha_only() {
        let with = BlockSimConfig::new(2.0, 9);
        let without = BlockSimConfig { tau2: 0.0, ..with.clone() };
        let (a, ta) = simulate_block(&with).unwrap();
        let (b, tb) = simulate_block(&without).unwrap();
        assert!(tb.alpha_blocks.as_ref().unwrap().iter().all(|&v| v == 0.0));
        let alpha = ta.alpha_blocks.as_ref().unwrap();
        let blocks = a.blocks.as_ref().unwrap();
        for i in 0..a.n_pixels() {
            let shift = alpha[blocks.label_of(i)];
            assert_abs_diff_eq!(
                a.y0[i].unwrap() - b.y0[i].unwrap(),
                shift,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                a.y1[i].unwrap() - b.y1[i].unwrap(),
                shift,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn hidden_covariates_confound_treatment_and_outcome() {
        // Partial correlation between D and Y0 given the observed covariates
        // should be clearly nonzero because x4 enters both models.
        let mut corr_sum = 0.0;
        let reps = 20;
        for rep in 0..reps {
            let cfg = PixelSimConfig::new(2.0, 1000 + rep);
            let (data, _) = simulate_pixel(&cfg).unwrap();
            let rows: Vec<usize> =
                (0..data.n_pixels()).filter(|&i| data.y0[i].is_some()).collect();
            // Residualize D and Y0 on (1, x1..x3) with simple OLS.
            let k = 4;
            let design: Vec<Vec<f64>> = rows
                .iter()
                .map(|&i| vec![1.0, data.x[(i, 0)], data.x[(i, 1)], data.x[(i, 2)]])
                .collect();
            let resid_on = |targets: &[f64]| -> Vec<f64> {
                let mut ztz = vec![vec![0.0; k]; k];
                let mut zty = vec![0.0; k];
                for (row, &t) in design.iter().zip(targets.iter()) {
                    for a in 0..k {
                        zty[a] += row[a] * t;
                        for b in 0..k {
                            ztz[a][b] += row[a] * row[b];
                        }
                    }
                }
                // tiny Gauss-Jordan
                let mut m: Vec<Vec<f64>> = (0..k)
                    .map(|i| {
                        let mut r = ztz[i].clone();
                        r.push(zty[i]);
                        r
                    })
                    .collect();
                for c in 0..k {
                    let p = (c..k)
                        .max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())
                        .unwrap();
                    m.swap(c, p);
                    let pv = m[c][c];
                    for v in &mut m[c] {
                        *v /= pv;
                    }
                    for r in 0..k {
                        if r != c {
                            let f = m[r][c];
                            for j in 0..=k {
                                m[r][j] -= f * m[c][j];
                            }
                        }
                    }
                }
                let beta: Vec<f64> = m.iter().map(|r| r[k]).collect();
                design
                    .iter()
                    .zip(targets.iter())
                    .map(|(row, &t)| t - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
                    .collect()
            };
            let d_vals: Vec<f64> = rows.iter().map(|&i| data.d[i] as f64).collect();
            let y_vals: Vec<f64> = rows.iter().map(|&i| data.y0[i].unwrap()).collect();
            let rd = resid_on(&d_vals);
            let ry = resid_on(&y_vals);
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (a, b) in rd.iter().zip(ry.iter()) {
                sxy += a * b;
                sxx += a * a;
                syy += b * b;
            }
            corr_sum += sxy / (sxx.sqrt() * syy.sqrt());
        }
        let mean_corr = corr_sum / reps as f64;
        assert!(mean_corr.abs() > 0.05, "mean partial correlation {mean_corr}");
    }
}
