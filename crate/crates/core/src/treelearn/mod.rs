//! First-stage learners: Bayesian additive regression tree ensembles for
//! continuous outcomes, a probit variant for the binary treatment, and a
//! block-random-intercept variant, behind one model type.
//!
//! The continuous fit internally rescales the response to `[-0.5, 0.5]`; the
//! leaf-mean prior is `Normal(0, (0.5/(k sqrt(T)))^2)` on that scale and the
//! noise variance gets the usual scaled-inverse-chi-squared prior calibrated
//! so a data-based overestimate sits at the configured quantile. The binary
//! fit runs latent truncated-normal augmentation with unit noise and a
//! `3/(k sqrt(T))` leaf prior scale, predicting through the probit link.

mod sampler;
mod tree;

pub use tree::CompactTree;

use std::io::Write;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use sampler::{cutpoint_grids, BackfitSampler, ColMatrix};

const CUTPOINT_GRID_SIZE: usize = 100;

fn std_normal() -> &'static Normal {
    static NORMAL: OnceLock<Normal> = OnceLock::new();
    NORMAL.get_or_init(|| Normal::new(0.0, 1.0).unwrap())
}

fn phi_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

fn phi_inv(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Sampler settings; defaults mirror the common package defaults for
/// continuous (200 trees) and binary (50 trees) fits.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub n_trees: usize,
    pub burn_in: usize,
    pub kept_draws: usize,
    /// Depth prior base: P(split at depth d) = base / (1+d)^power.
    /// Zero disables splitting entirely (degenerate root-only ensembles,
    /// useful for sampler validation).
    pub split_prob_base: f64,
    pub split_prob_power: f64,
    /// Leaf shrinkage k; larger means stronger shrinkage toward zero.
    pub leaf_shrinkage: f64,
    /// Degrees of freedom of the noise-variance prior.
    pub noise_df: f64,
    /// Prior mass placed below the data-based noise overestimate.
    pub noise_quantile: f64,
    pub seed: u64,
}

impl LearnerConfig {
    pub fn continuous_default() -> Self {
        Self {
            n_trees: 200,
            burn_in: 100,
            kept_draws: 1000,
            split_prob_base: 0.95,
            split_prob_power: 2.0,
            leaf_shrinkage: 2.0,
            noise_df: 3.0,
            noise_quantile: 0.90,
            seed: 0,
        }
    }

    pub fn binary_default() -> Self {
        Self { n_trees: 50, ..Self::continuous_default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.kept_draws == 0 {
            return Err(Error::Config("n_trees and kept_draws must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.split_prob_base) {
            return Err(Error::Config(format!(
                "split_prob_base must lie in [0,1), got {}",
                self.split_prob_base
            )));
        }
        if self.split_prob_power < 0.0 {
            return Err(Error::Config("split_prob_power must be nonnegative".into()));
        }
        if !(self.leaf_shrinkage > 0.0) {
            return Err(Error::Config("leaf_shrinkage must be positive".into()));
        }
        if !(self.noise_df > 0.0) || !(0.0 < self.noise_quantile && self.noise_quantile < 1.0) {
            return Err(Error::Config("invalid noise prior settings".into()));
        }
        Ok(())
    }
}

/// How raw responses map to the sampler's working scale.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ResponseTransform {
    /// `working = (y - offset) / scale`; `scale == 0` marks a constant
    /// response handled by a constant predictor.
    Continuous { offset: f64, scale: f64 },
    /// Latent probit with fixed intercept `offset`.
    Binary { offset: f64 },
}

/// A fitted sum-of-trees posterior: one compact forest per kept draw.
#[derive(Debug, Clone)]
pub struct TreeEnsembleModel {
    transform: ResponseTransform,
    n_features: usize,
    forests: Vec<Vec<CompactTree>>,
    split_count_sum: Vec<f64>,
    /// Noise variance draws on the original response scale (continuous only).
    sigma2_draws: Vec<f64>,
    degenerate: bool,
}

impl TreeEnsembleModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn kept_draws(&self) -> usize {
        self.forests.len().max(1)
    }

    /// True when the response was constant and the model collapsed to a
    /// constant predictor.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn sigma2_draws(&self) -> &[f64] {
        &self.sigma2_draws
    }

    /// Posterior-mean prediction for each row; probabilities in (0,1) for
    /// binary fits. Deterministic given the fitted model.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.n_features {
            return Err(Error::Shape(format!(
                "model was trained on {} features, got {}",
                self.n_features,
                features.ncols()
            )));
        }
        let n = features.nrows();
        let mut out = vec![0.0; n];
        match self.transform {
            ResponseTransform::Continuous { offset, scale } => {
                if self.forests.is_empty() {
                    return Ok(vec![offset; n]);
                }
                for (i, row_out) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for forest in &self.forests {
                        let mut fit = 0.0;
                        for tree in forest {
                            fit += tree.predict_row(|v| features[(i, v)]);
                        }
                        acc += fit;
                    }
                    *row_out = offset + scale * acc / self.forests.len() as f64;
                }
            }
            ResponseTransform::Binary { offset } => {
                if self.forests.is_empty() {
                    return Ok(vec![phi_cdf(offset); n]);
                }
                for (i, row_out) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for forest in &self.forests {
                        let mut fit = offset;
                        for tree in forest {
                            fit += tree.predict_row(|v| features[(i, v)]);
                        }
                        acc += phi_cdf(fit);
                    }
                    *row_out = acc / self.forests.len() as f64;
                }
            }
        }
        Ok(out)
    }

    /// Average number of internal nodes splitting on each feature per kept
    /// draw (the split-count importance statistic).
    pub fn variable_importance(&self) -> Vec<f64> {
        if self.forests.is_empty() {
            return vec![0.0; self.n_features];
        }
        let draws = self.forests.len() as f64;
        self.split_count_sum.iter().map(|s| s / draws).collect()
    }

    /// Self-describing text dump of every tree in every kept draw, one node
    /// per line. Intended for debugging, not machine round-trips.
    pub fn dump_trees<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# tree ensemble dump v1")?;
        writeln!(w, "# draws={} trees_per_draw={}", self.forests.len(), self
            .forests
            .first()
            .map_or(0, Vec::len))?;
        for (d, forest) in self.forests.iter().enumerate() {
            for (t, tree) in forest.iter().enumerate() {
                writeln!(w, "draw {d} tree {t}")?;
                for (id, node) in tree.nodes.iter().enumerate() {
                    if node.var == u32::MAX {
                        writeln!(w, "  node {id} leaf value={}", node.num)?;
                    } else {
                        writeln!(
                            w,
                            "  node {id} split var={} cut={} left={} right={}",
                            node.var, node.num, node.left, node.right
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Posterior draws for the block random intercepts.
#[derive(Debug, Clone)]
pub struct RandomEffectsFit {
    /// Original block labels present in the training rows, ascending.
    pub block_ids: Vec<usize>,
    /// Per kept draw, one intercept per entry of `block_ids` (original
    /// response scale).
    pub alpha_draws: Vec<Vec<f64>>,
    /// Intercept variance draws (original response scale).
    pub tau2_draws: Vec<f64>,
}

impl RandomEffectsFit {
    pub fn alpha_posterior_mean(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.block_ids.len()];
        for draw in &self.alpha_draws {
            for (m, a) in means.iter_mut().zip(draw) {
                *m += a;
            }
        }
        let n = self.alpha_draws.len().max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn tau2_posterior_mean(&self) -> f64 {
        if self.tau2_draws.is_empty() {
            return 0.0;
        }
        self.tau2_draws.iter().sum::<f64>() / self.tau2_draws.len() as f64
    }
}

fn validate_features(features: &Array2<f64>, n_expected_rows: usize) -> Result<()> {
    if features.nrows() != n_expected_rows {
        return Err(Error::Shape(format!(
            "{} feature rows for {} responses",
            features.nrows(),
            n_expected_rows
        )));
    }
    if features.ncols() == 0 {
        return Err(Error::Config("at least one feature column is required".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite feature value".into()));
    }
    Ok(())
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Noise prior scale: `lambda` such that the prior on sigma^2 puts
/// `quantile` of its mass below `sigma_hat^2`.
fn noise_prior_lambda(sigma_hat: f64, df: f64, quantile: f64) -> f64 {
    let chi = ChiSquared::new(df).expect("valid df");
    sigma_hat * sigma_hat * chi.inverse_cdf(1.0 - quantile) / df
}

fn draw_sigma2(
    df: f64,
    lambda: f64,
    residuals: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    let shape = (df + residuals.len() as f64) / 2.0;
    let chi: f64 = Gamma::new(shape, 2.0).expect("valid gamma").sample(rng);
    (df * lambda + ss) / chi
}

/// `w ~ Normal(0,1)` conditioned on `w > a`; rejection sampling with a
/// translated-exponential proposal in the far tail.
fn truncated_standard_above(a: f64, rng: &mut ChaCha8Rng) -> f64 {
    if a <= 0.0 {
        loop {
            let w: f64 = StandardNormal.sample(rng);
            if w > a {
                return w;
            }
        }
    } else {
        let lambda = (a + (a * a + 4.0).sqrt()) / 2.0;
        loop {
            let u1: f64 = rng.random();
            let x = a - (1.0 - u1).ln() / lambda;
            let diff = x - lambda;
            let u2: f64 = rng.random();
            if u2 <= (-(diff * diff) / 2.0).exp() {
                return x;
            }
        }
    }
}

fn truncated_normal(mean: f64, positive: bool, rng: &mut ChaCha8Rng) -> f64 {
    if positive {
        mean + truncated_standard_above(-mean, rng)
    } else {
        mean - truncated_standard_above(mean, rng)
    }
}

/// Fit the continuous-response ensemble.
pub fn fit_continuous(
    features: &Array2<f64>,
    y: &[f64],
    cfg: &LearnerConfig,
) -> Result<TreeEnsembleModel> {
    cfg.validate()?;
    validate_features(features, y.len())?;
    if y.len() < 10 {
        return Err(Error::Config(format!("need at least 10 rows, got {}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite response value".into()));
    }

    let (min, max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if min == max {
        log::warn!("constant response; returning a constant predictor");
        return Ok(TreeEnsembleModel {
            transform: ResponseTransform::Continuous { offset: min, scale: 0.0 },
            n_features: features.ncols(),
            forests: Vec::new(),
            split_count_sum: vec![0.0; features.ncols()],
            sigma2_draws: Vec::new(),
            degenerate: true,
        });
    }
    let offset = 0.5 * (min + max);
    let scale = max - min;
    let y_scaled: Vec<f64> = y.iter().map(|&v| (v - offset) / scale).collect();

    let x = ColMatrix::from_rows(features);
    let grids = cutpoint_grids(&x, CUTPOINT_GRID_SIZE);
    let sigma_mu = 0.5 / (cfg.leaf_shrinkage * (cfg.n_trees as f64).sqrt());
    let sigma_hat = sample_sd(&y_scaled);
    let lambda = noise_prior_lambda(sigma_hat, cfg.noise_df, cfg.noise_quantile);

    let mut sampler = BackfitSampler::new(
        &x,
        &grids,
        cfg.n_trees,
        sigma_mu * sigma_mu,
        cfg.split_prob_base,
        cfg.split_prob_power,
        &y_scaled,
    );
    let mut rng = rng_from_seed(cfg.seed);
    let mut sigma2 = sigma_hat * sigma_hat;
    let mut forests = Vec::with_capacity(cfg.kept_draws);
    let mut split_count_sum = vec![0.0; features.ncols()];
    let mut sigma2_draws = Vec::with_capacity(cfg.kept_draws);

    for iter in 0..cfg.burn_in + cfg.kept_draws {
        sampler.sweep(sigma2, &mut rng);
        sigma2 = draw_sigma2(cfg.noise_df, lambda, sampler.resid(), &mut rng);
        if iter >= cfg.burn_in {
            let forest = sampler.snapshot_forest();
            for tree in &forest {
                tree.accumulate_split_counts(&mut split_count_sum);
            }
            forests.push(forest);
            sigma2_draws.push(sigma2 * scale * scale);
        }
    }

    Ok(TreeEnsembleModel {
        transform: ResponseTransform::Continuous { offset, scale },
        n_features: features.ncols(),
        forests,
        split_count_sum,
        sigma2_draws,
        degenerate: false,
    })
}

/// Fit the binary-treatment ensemble via probit latent augmentation.
pub fn fit_binary(
    features: &Array2<f64>,
    d: &[u8],
    cfg: &LearnerConfig,
) -> Result<TreeEnsembleModel> {
    cfg.validate()?;
    validate_features(features, d.len())?;
    if d.len() < 10 {
        return Err(Error::Config(format!("need at least 10 rows, got {}", d.len())));
    }
    if d.iter().any(|&v| v > 1) {
        return Err(Error::Validation(vec!["treatment values must be 0 or 1".into()]));
    }
    let n_treated = d.iter().filter(|&&v| v == 1).count();
    if n_treated == 0 || n_treated == d.len() {
        return Err(Error::Degenerate(
            "treatment has a single class; fit a constant propensity instead".into(),
        ));
    }

    let n = d.len();
    let base_rate = n_treated as f64 / n as f64;
    let offset = phi_inv(base_rate);

    let x = ColMatrix::from_rows(features);
    let grids = cutpoint_grids(&x, CUTPOINT_GRID_SIZE);
    let sigma_mu = 3.0 / (cfg.leaf_shrinkage * (cfg.n_trees as f64).sqrt());

    let mut rng = rng_from_seed(cfg.seed);
    // Latent working response handed to the trees is z - offset.
    let mut working: Vec<f64> = d
        .iter()
        .map(|&di| truncated_normal(offset, di == 1, &mut rng) - offset)
        .collect();
    let mut sampler = BackfitSampler::new(
        &x,
        &grids,
        cfg.n_trees,
        sigma_mu * sigma_mu,
        cfg.split_prob_base,
        cfg.split_prob_power,
        &working,
    );

    let mut forests = Vec::with_capacity(cfg.kept_draws);
    let mut split_count_sum = vec![0.0; features.ncols()];

    for iter in 0..cfg.burn_in + cfg.kept_draws {
        sampler.sweep(1.0, &mut rng);
        // Redraw latents around the current fit.
        for i in 0..n {
            let tree_fit = sampler.fitted(i, working[i]);
            let z = truncated_normal(offset + tree_fit, d[i] == 1, &mut rng);
            let new_working = z - offset;
            sampler.shift_response(i, new_working - working[i]);
            working[i] = new_working;
        }
        if iter >= cfg.burn_in {
            let forest = sampler.snapshot_forest();
            for tree in &forest {
                tree.accumulate_split_counts(&mut split_count_sum);
            }
            forests.push(forest);
        }
    }

    Ok(TreeEnsembleModel {
        transform: ResponseTransform::Binary { offset },
        n_features: features.ncols(),
        forests,
        split_count_sum,
        sigma2_draws: Vec::new(),
        degenerate: false,
    })
}

/// Fit the continuous ensemble with a block random intercept.
///
/// Gibbs cycle: trees on the response net of intercepts, conjugate Normal
/// updates for each block intercept, inverse-gamma update for the intercept
/// variance (weak prior: shape 1, scale 1 on the original response scale).
/// Predictions from the returned model are the marginal mean structure (the
/// trees alone); the intercept draws live in [`RandomEffectsFit`].
pub fn fit_continuous_re(
    features: &Array2<f64>,
    y: &[f64],
    block_of_row: &[usize],
    cfg: &LearnerConfig,
) -> Result<(TreeEnsembleModel, RandomEffectsFit)> {
    cfg.validate()?;
    validate_features(features, y.len())?;
    if block_of_row.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} block labels for {} rows",
            block_of_row.len(),
            y.len()
        )));
    }
    if y.len() < 10 {
        return Err(Error::Config(format!("need at least 10 rows, got {}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite response value".into()));
    }

    // Dense-remap the block labels seen in these rows.
    let mut block_ids: Vec<usize> = block_of_row.to_vec();
    block_ids.sort_unstable();
    block_ids.dedup();
    let dense_of = |label: usize| block_ids.binary_search(&label).unwrap();
    let dense: Vec<usize> = block_of_row.iter().map(|&b| dense_of(b)).collect();
    let n_blocks = block_ids.len();
    let mut rows_of_block = vec![Vec::new(); n_blocks];
    for (row, &g) in dense.iter().enumerate() {
        rows_of_block[g].push(row);
    }

    let (min, max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if min == max {
        log::warn!("constant response; returning a constant predictor");
        let model = TreeEnsembleModel {
            transform: ResponseTransform::Continuous { offset: min, scale: 0.0 },
            n_features: features.ncols(),
            forests: Vec::new(),
            split_count_sum: vec![0.0; features.ncols()],
            sigma2_draws: Vec::new(),
            degenerate: true,
        };
        let re = RandomEffectsFit { block_ids, alpha_draws: Vec::new(), tau2_draws: Vec::new() };
        return Ok((model, re));
    }
    let offset = 0.5 * (min + max);
    let scale = max - min;
    let y_scaled: Vec<f64> = y.iter().map(|&v| (v - offset) / scale).collect();

    let x = ColMatrix::from_rows(features);
    let grids = cutpoint_grids(&x, CUTPOINT_GRID_SIZE);
    let sigma_mu = 0.5 / (cfg.leaf_shrinkage * (cfg.n_trees as f64).sqrt());
    let sigma_hat = sample_sd(&y_scaled);
    let lambda = noise_prior_lambda(sigma_hat, cfg.noise_df, cfg.noise_quantile);

    // Intercept variance prior InvGamma(1, 1) on the original scale maps to
    // InvGamma(1, 1/scale^2) on the working scale.
    let tau2_prior_shape = 1.0;
    let tau2_prior_scale = 1.0 / (scale * scale);

    let mut alpha = vec![0.0; n_blocks];
    let mut tau2 = tau2_prior_scale.max(1e-12);
    let mut sigma2 = sigma_hat * sigma_hat;

    let mut sampler = BackfitSampler::new(
        &x,
        &grids,
        cfg.n_trees,
        sigma_mu * sigma_mu,
        cfg.split_prob_base,
        cfg.split_prob_power,
        &y_scaled,
    );
    let mut rng = rng_from_seed(cfg.seed);

    let mut forests = Vec::with_capacity(cfg.kept_draws);
    let mut split_count_sum = vec![0.0; features.ncols()];
    let mut sigma2_draws = Vec::with_capacity(cfg.kept_draws);
    let mut alpha_draws = Vec::with_capacity(cfg.kept_draws);
    let mut tau2_draws = Vec::with_capacity(cfg.kept_draws);

    for iter in 0..cfg.burn_in + cfg.kept_draws {
        sampler.sweep(sigma2, &mut rng);

        // Block intercepts given trees and noise.
        for g in 0..n_blocks {
            let rows = &rows_of_block[g];
            let sum: f64 = rows.iter().map(|&r| sampler.resid()[r]).sum::<f64>()
                + rows.len() as f64 * alpha[g];
            let precision = rows.len() as f64 / sigma2 + 1.0 / tau2;
            let mean = sum / sigma2 / precision;
            let z: f64 = StandardNormal.sample(&mut rng);
            let new_alpha = mean + z / precision.sqrt();
            let delta = new_alpha - alpha[g];
            for &r in rows {
                sampler.shift_response(r, -delta);
            }
            alpha[g] = new_alpha;
        }

        // Intercept variance.
        let alpha_ss: f64 = alpha.iter().map(|a| a * a).sum();
        let shape = tau2_prior_shape + n_blocks as f64 / 2.0;
        let rate = tau2_prior_scale + alpha_ss / 2.0;
        let g: f64 = Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(&mut rng);
        tau2 = 1.0 / g;

        sigma2 = draw_sigma2(cfg.noise_df, lambda, sampler.resid(), &mut rng);

        if iter >= cfg.burn_in {
            let forest = sampler.snapshot_forest();
            for tree in &forest {
                tree.accumulate_split_counts(&mut split_count_sum);
            }
            forests.push(forest);
            sigma2_draws.push(sigma2 * scale * scale);
            alpha_draws.push(alpha.iter().map(|a| a * scale).collect());
            tau2_draws.push(tau2 * scale * scale);
        }
    }

    let model = TreeEnsembleModel {
        transform: ResponseTransform::Continuous { offset, scale },
        n_features: features.ncols(),
        forests,
        split_count_sum,
        sigma2_draws,
        degenerate: false,
    };
    let re = RandomEffectsFit { block_ids, alpha_draws, tau2_draws };
    Ok((model, re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn quick_cfg(seed: u64) -> LearnerConfig {
        LearnerConfig {
            n_trees: 20,
            burn_in: 30,
            kept_draws: 60,
            seed,
            ..LearnerConfig::continuous_default()
        }
    }

    fn toy_features(n: usize, q: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_fn((n, q), |_| rng.random::<f64>())
    }

    #[test]
    fn constant_response_yields_constant_predictions() {
        let x = toy_features(20, 3, 1);
        let model = fit_continuous(&x, &vec![4.25; 20], &quick_cfg(2)).unwrap();
        assert!(model.is_degenerate());
        let preds = model.predict(&x).unwrap();
        assert!(preds.iter().all(|&p| p == 4.25));
        assert!(model.variable_importance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prediction_is_deterministic_and_schema_checked() {
        let x = toy_features(30, 4, 3);
        let y: Vec<f64> = (0..30).map(|i| x[(i, 0)] * 2.0 + 0.1).collect();
        let model = fit_continuous(&x, &y, &quick_cfg(4)).unwrap();
        let p1 = model.predict(&x).unwrap();
        let p2 = model.predict(&x).unwrap();
        assert_eq!(p1, p2);
        let wrong = toy_features(5, 3, 9);
        assert!(matches!(model.predict(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn same_seed_gives_bitwise_identical_models() {
        let x = toy_features(40, 3, 5);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.2).sin()).collect();
        let a = fit_continuous(&x, &y, &quick_cfg(11)).unwrap();
        let b = fit_continuous(&x, &y, &quick_cfg(11)).unwrap();
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
        let c = fit_continuous(&x, &y, &quick_cfg(12)).unwrap();
        assert_ne!(a.predict(&x).unwrap(), c.predict(&x).unwrap());
    }

    #[test]
    fn response_scaling_scales_predictions() {
        let x = toy_features(60, 3, 6);
        let y: Vec<f64> = (0..60).map(|i| x[(i, 1)] * 3.0 + 0.5).collect();
        let y10: Vec<f64> = y.iter().map(|v| v * 10.0).collect();
        let a = fit_continuous(&x, &y, &quick_cfg(21)).unwrap();
        let b = fit_continuous(&x, &y10, &quick_cfg(21)).unwrap();
        let pa = a.predict(&x).unwrap();
        let pb = b.predict(&x).unwrap();
        let sd = sample_sd(&y10);
        let rms = (pa
            .iter()
            .zip(&pb)
            .map(|(l, h)| (10.0 * l - h).powi(2))
            .sum::<f64>()
            / pa.len() as f64)
            .sqrt();
        assert!(rms / sd < 0.05, "relative RMS {}", rms / sd);
    }

    #[test]
    fn importance_ranks_the_active_feature_and_sums_to_internal_count() {
        let n = 150;
        let x = toy_features(n, 4, 7);
        let mut rng = rng_from_seed(8);
        let y: Vec<f64> = (0..n)
            .map(|i| 5.0 * x[(i, 0)] + 0.1 * rng.random::<f64>())
            .collect();
        let model = fit_continuous(&x, &y, &quick_cfg(9)).unwrap();
        let imp = model.variable_importance();
        assert!(imp[0] > imp[1] && imp[0] > imp[2] && imp[0] > imp[3], "{imp:?}");
        assert!(imp.iter().all(|&v| v >= 0.0));
        // Accounting identity against a recount from the stored forests.
        let total: f64 = model
            .forests
            .iter()
            .map(|f| f.iter().map(CompactTree::n_internal).sum::<usize>() as f64)
            .sum();
        let avg_internal = total / model.forests.len() as f64;
        let imp_sum: f64 = imp.iter().sum();
        assert!((imp_sum - avg_internal).abs() < 1e-9);
    }

    #[test]
    fn binary_fit_requires_both_classes_and_stays_in_unit_interval() {
        let x = toy_features(40, 3, 10);
        let all_ones = vec![1u8; 40];
        assert!(matches!(
            fit_binary(&x, &all_ones, &quick_cfg(1)),
            Err(Error::Degenerate(_))
        ));
        let d: Vec<u8> = (0..40).map(|i| u8::from(x[(i, 0)] > 0.5)).collect();
        let model = fit_binary(&x, &d, &quick_cfg(2)).unwrap();
        let p = model.predict(&x).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn no_signal_binary_concentrates_at_base_rate() {
        let n = 200;
        let x = toy_features(n, 3, 13);
        let mut rng = rng_from_seed(14);
        let d: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let model = fit_binary(&x, &d, &quick_cfg(15)).unwrap();
        let p = model.predict(&x).unwrap();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean prediction {mean}");
    }

    #[test]
    fn single_block_re_fit_matches_plain_fit_plus_intercept() {
        let n = 80;
        let x = toy_features(n, 3, 16);
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x[(i, 0)] + 1.0).collect();
        let blocks = vec![0usize; n];
        // Longer chain than the other unit tests: with a single block the
        // intercept and the trees trade off, so posterior means need more
        // draws to settle.
        let cfg = LearnerConfig {
            n_trees: 50,
            burn_in: 100,
            kept_draws: 400,
            seed: 17,
            ..LearnerConfig::continuous_default()
        };
        let (re_model, re) = fit_continuous_re(&x, &y, &blocks, &cfg).unwrap();
        let plain = fit_continuous(&x, &y, &cfg).unwrap();
        let alpha = re.alpha_posterior_mean()[0];
        let p_re: Vec<f64> =
            re_model.predict(&x).unwrap().iter().map(|v| v + alpha).collect();
        let p_plain = plain.predict(&x).unwrap();
        let sd = sample_sd(&y);
        let rms = (p_re
            .iter()
            .zip(&p_plain)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rms / sd < 0.05, "relative RMS {}", rms / sd);
    }

    #[test]
    fn re_fit_draws_are_shaped_and_positive() {
        let n = 64;
        let x = toy_features(n, 2, 18);
        let mut rng = rng_from_seed(19);
        let blocks: Vec<usize> = (0..n).map(|i| i / 8).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| blocks[i] as f64 * 0.5 + rng.random::<f64>())
            .collect();
        let (_, re) = fit_continuous_re(&x, &y, &blocks, &quick_cfg(20)).unwrap();
        assert_eq!(re.block_ids, (0..8).collect::<Vec<_>>());
        assert!(re.alpha_draws.iter().all(|d| d.len() == 8));
        assert!(re.tau2_draws.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn dump_trees_writes_node_lines() {
        let x = toy_features(30, 2, 22);
        let y: Vec<f64> = (0..30).map(|i| x[(i, 0)]).collect();
        let model = fit_continuous(&x, &y, &quick_cfg(23)).unwrap();
        let mut buf = Vec::new();
        model.dump_trees(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# tree ensemble dump v1"));
        assert!(text.contains("leaf value="));
    }
}
