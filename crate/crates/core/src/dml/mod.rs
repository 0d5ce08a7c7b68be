//! The estimation core: fold allocation, cross-fitted first-stage
//! orchestration, residual construction, the residual-on-residual second
//! stage with HC0 standard errors, and the OLS / spatial DID baselines.

mod regress;
pub mod oracle;

pub use regress::{EffectEstimate, Z_CRIT_95};

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::lattice::{
    build_basis, neighbor_mean_masked, BlockPartition, Grid, Neighborhood, NeighborScheme,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::treelearn::{
    fit_binary, fit_continuous, fit_continuous_re, LearnerConfig, TreeEnsembleModel,
};
use regress::{estimate_from_fit, robust_least_squares};

/// Per-pixel outcomes at two periods, binary treatment, covariates and
/// optional block labels over a grid.
#[derive(Debug, Clone)]
pub struct GridDataset {
    pub grid: Grid,
    pub y0: Vec<Option<f64>>,
    pub y1: Vec<Option<f64>>,
    pub d: Vec<u8>,
    /// Observed covariates, one row per pixel (no intercept column; the
    /// estimators add their own).
    pub x: Array2<f64>,
    pub covariate_names: Vec<String>,
    pub blocks: Option<BlockPartition>,
}

impl GridDataset {
    pub fn new(
        grid: Grid,
        y0: Vec<Option<f64>>,
        y1: Vec<Option<f64>>,
        d: Vec<u8>,
        x: Array2<f64>,
        covariate_names: Vec<String>,
        blocks: Option<BlockPartition>,
    ) -> Result<Self> {
        let n = grid.n_pixels();
        if y0.len() != n || y1.len() != n || d.len() != n || x.nrows() != n {
            return Err(Error::Shape(format!(
                "dataset arrays must have one entry per pixel ({n}); got y0={}, y1={}, d={}, x rows={}",
                y0.len(),
                y1.len(),
                d.len(),
                x.nrows()
            )));
        }
        if covariate_names.len() != x.ncols() {
            return Err(Error::Shape(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                x.ncols()
            )));
        }
        if let Some(bad) = d.iter().position(|&v| v > 1) {
            return Err(Error::Validation(vec![format!(
                "treatment must be 0/1; pixel {bad} has {}",
                d[bad]
            )]));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(vec!["non-finite covariate value".into()]));
        }
        for (name, column) in [("Y0", &y0), ("Y1", &y1)] {
            if let Some(bad) = column.iter().position(|v| v.is_some_and(|x| !x.is_finite())) {
                return Err(Error::Validation(vec![format!(
                    "non-finite {name} at pixel {bad}"
                )]));
            }
        }
        if let Some(b) = &blocks {
            if b.labels().len() != n {
                return Err(Error::Shape("block labels must cover every pixel".into()));
            }
        }
        Ok(Self { grid, y0, y1, d, x, covariate_names, blocks })
    }

    pub fn n_pixels(&self) -> usize {
        self.grid.n_pixels()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn treated_fraction(&self) -> f64 {
        self.d.iter().map(|&v| v as usize).sum::<usize>() as f64 / self.d.len() as f64
    }

    pub fn missing_fraction(&self, period: usize) -> f64 {
        let column = if period == 0 { &self.y0 } else { &self.y1 };
        column.iter().filter(|v| v.is_none()).count() as f64 / column.len() as f64
    }
}

/// Feature sets for the first-stage regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    /// Observed covariates only.
    X,
    /// Covariates plus the two coordinates.
    XS,
    /// Covariates, coordinates, and the Wendland embedding.
    Xsz,
}

impl FeatureSet {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(FeatureSet::X),
            "xs" => Ok(FeatureSet::XS),
            "xsz" => Ok(FeatureSet::Xsz),
            other => Err(Error::Config(format!("unknown feature set '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureSet::X => "X",
            FeatureSet::XS => "XS",
            FeatureSet::Xsz => "XSZ",
        }
    }
}

/// Cross-fitting mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossFitMode {
    None,
    ByPixel,
    ByBlock,
}

impl CrossFitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(CrossFitMode::None),
            "pixel" | "by_pixel" => Ok(CrossFitMode::ByPixel),
            "block" | "by_block" => Ok(CrossFitMode::ByBlock),
            other => Err(Error::Config(format!("unknown cross-fit mode '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CrossFitMode::None => "none",
            CrossFitMode::ByPixel => "by_pixel",
            CrossFitMode::ByBlock => "by_block",
        }
    }
}

/// First-stage random-effects mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReMode {
    None,
    BlockRe,
}

impl ReMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ReMode::None),
            "block" | "block_re" => Ok(ReMode::BlockRe),
            other => Err(Error::Config(format!("unknown random-effects mode '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReMode::None => "none",
            ReMode::BlockRe => "block_re",
        }
    }
}

/// Fold labels per pixel; all three first-stage regressions share them.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub mode: CrossFitMode,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Allocate pixels (or whole blocks) to folds as a complete random sample.
pub fn assign_folds(
    data: &GridDataset,
    k: usize,
    mode: CrossFitMode,
    seed: u64,
) -> Result<FoldAssignment> {
    let n = data.n_pixels();
    match mode {
        CrossFitMode::None => Ok(FoldAssignment { k: 1, labels: vec![0; n], mode }),
        CrossFitMode::ByPixel => {
            if k < 2 {
                return Err(Error::Config("cross-fitting needs at least 2 folds".into()));
            }
            if k > n {
                return Err(Error::Config(format!("{k} folds for only {n} pixels")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_from_seed(seed));
            let mut labels = vec![0usize; n];
            for (pos, &pixel) in order.iter().enumerate() {
                labels[pixel] = pos % k;
            }
            Ok(FoldAssignment { k, labels, mode })
        }
        CrossFitMode::ByBlock => {
            let blocks = data
                .blocks
                .as_ref()
                .ok_or_else(|| Error::Config("by-block cross-fitting needs block labels".into()))?;
            if k < 2 {
                return Err(Error::Config("cross-fitting needs at least 2 folds".into()));
            }
            if k > blocks.n_blocks() {
                return Err(Error::Config(format!(
                    "{k} folds for only {} blocks",
                    blocks.n_blocks()
                )));
            }
            let mut order: Vec<usize> = (0..blocks.n_blocks()).collect();
            order.shuffle(&mut rng_from_seed(seed));
            let mut block_fold = vec![0usize; blocks.n_blocks()];
            for (pos, &block) in order.iter().enumerate() {
                block_fold[block] = pos % k;
            }
            let labels = blocks.labels().iter().map(|&g| block_fold[g]).collect();
            Ok(FoldAssignment { k, labels, mode })
        }
    }
}

/// Assemble the first-stage feature matrix and its column names.
pub fn build_features(
    data: &GridDataset,
    set: FeatureSet,
    l_basis: usize,
) -> Result<(Array2<f64>, Vec<String>)> {
    let n = data.n_pixels();
    let p = data.n_covariates();
    let mut names: Vec<String> = data.covariate_names.clone();
    let mut columns: Vec<Vec<f64>> = (0..p)
        .map(|j| data.x.column(j).to_vec())
        .collect();

    if matches!(set, FeatureSet::XS | FeatureSet::Xsz) {
        let coords = data.grid.coords();
        columns.push(coords.iter().map(|c| c.0).collect());
        columns.push(coords.iter().map(|c| c.1).collect());
        names.push("s_x".into());
        names.push("s_y".into());
    }
    if matches!(set, FeatureSet::Xsz) {
        let kps = knots_per_side(l_basis)?;
        let basis = build_basis(&data.grid, kps)?;
        for l in 0..basis.n_knots() {
            columns.push(basis.features().column(l).to_vec());
            names.push(format!("z{}", l + 1));
        }
    }
    if columns.is_empty() {
        return Err(Error::Config(
            "feature set X with zero covariates leaves nothing to fit".into(),
        ));
    }
    let q = columns.len();
    let mut features = Array2::zeros((n, q));
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            features[(i, j)] = v;
        }
    }
    Ok((features, names))
}

/// Number of knots per side for `l` basis functions; `l` must be a perfect
/// square of at least 4.
pub fn knots_per_side(l: usize) -> Result<usize> {
    let kps = (l as f64).sqrt().round() as usize;
    if kps < 2 || kps * kps != l {
        return Err(Error::Config(format!(
            "basis size must be a perfect square >= 4, got {l}"
        )));
    }
    Ok(kps)
}

/// First-stage configuration: which features the learners see and how the
/// outcome fits treat blocks.
#[derive(Debug, Clone)]
pub struct FirstStageConfig {
    pub feature_set: FeatureSet,
    pub re_mode: ReMode,
    pub l_basis: usize,
    pub learner_continuous: LearnerConfig,
    pub learner_binary: LearnerConfig,
}

/// Cross-fitted predictions plus per-target importance summaries.
#[derive(Debug, Clone)]
pub struct FirstStagePredictions {
    pub y0_hat: Vec<Option<f64>>,
    pub y1_hat: Vec<Option<f64>>,
    pub d_hat: Vec<f64>,
    /// Split-count importance averaged over folds, one entry per feature.
    pub importance_y0: Vec<f64>,
    pub importance_y1: Vec<f64>,
    pub importance_d: Vec<f64>,
    pub feature_names: Vec<String>,
    pub fold_sizes: Vec<usize>,
}

enum OutcomeTarget {
    Y0,
    Y1,
}

fn fold_context(err: Error, target: &str, fold: usize) -> Error {
    Error::Numerical(format!("first-stage {target} fit failed in fold {fold}: {err}"))
}

/// Run the three first-stage regressions with cross-fitting: for each fold,
/// models trained on the other folds predict it. With a single fold the
/// models train and predict on the full data.
pub fn first_stage(
    data: &GridDataset,
    folds: &FoldAssignment,
    cfg: &FirstStageConfig,
) -> Result<FirstStagePredictions> {
    let n = data.n_pixels();
    let (features, feature_names) = build_features(data, cfg.feature_set, cfg.l_basis)?;
    let q = features.ncols();

    let mut y0_hat = vec![None; n];
    let mut y1_hat = vec![None; n];
    let mut d_hat = vec![0.0; n];
    let mut imp_y0 = vec![0.0; q];
    let mut imp_y1 = vec![0.0; q];
    let mut imp_d = vec![0.0; q];

    let rows_matrix = |rows: &[usize]| -> Array2<f64> {
        Array2::from_shape_fn((rows.len(), q), |(i, j)| features[(rows[i], j)])
    };

    for fold in 0..folds.k {
        let test: Vec<usize> = (0..n).filter(|&i| folds.labels[i] == fold).collect();
        let train: Vec<usize> = if folds.k == 1 {
            (0..n).collect()
        } else {
            (0..n).filter(|&i| folds.labels[i] != fold).collect()
        };

        // Outcome fits, one per period, on rows where that outcome exists.
        for (target, label) in [(OutcomeTarget::Y0, "Y0"), (OutcomeTarget::Y1, "Y1")] {
            let observed: &Vec<Option<f64>> = match target {
                OutcomeTarget::Y0 => &data.y0,
                OutcomeTarget::Y1 => &data.y1,
            };
            let train_rows: Vec<usize> =
                train.iter().copied().filter(|&i| observed[i].is_some()).collect();
            let test_rows: Vec<usize> =
                test.iter().copied().filter(|&i| observed[i].is_some()).collect();
            if test_rows.is_empty() {
                continue;
            }
            let y: Vec<f64> = train_rows.iter().map(|&i| observed[i].unwrap()).collect();
            let x_train = rows_matrix(&train_rows);
            let target_salt = match target {
                OutcomeTarget::Y0 => 0,
                OutcomeTarget::Y1 => 1,
            };
            let mut learner = cfg.learner_continuous.clone();
            learner.seed = derive_seed(cfg.learner_continuous.seed, &[target_salt, fold as u64]);

            let (model, importance): (TreeEnsembleModel, Vec<f64>) = match cfg.re_mode {
                ReMode::None => {
                    let m = fit_continuous(&x_train, &y, &learner)
                        .map_err(|e| fold_context(e, label, fold))?;
                    let imp = m.variable_importance();
                    (m, imp)
                }
                ReMode::BlockRe => {
                    let blocks = data.blocks.as_ref().ok_or_else(|| {
                        Error::Config("block random effects need block labels".into())
                    })?;
                    let row_blocks: Vec<usize> =
                        train_rows.iter().map(|&i| blocks.label_of(i)).collect();
                    let (m, _re) = fit_continuous_re(&x_train, &y, &row_blocks, &learner)
                        .map_err(|e| fold_context(e, label, fold))?;
                    let imp = m.variable_importance();
                    (m, imp)
                }
            };
            let x_test = rows_matrix(&test_rows);
            let preds = model.predict(&x_test).map_err(|e| fold_context(e, label, fold))?;
            let out = match target {
                OutcomeTarget::Y0 => &mut y0_hat,
                OutcomeTarget::Y1 => &mut y1_hat,
            };
            for (&row, &p) in test_rows.iter().zip(preds.iter()) {
                out[row] = Some(p);
            }
            let imp_acc = match target {
                OutcomeTarget::Y0 => &mut imp_y0,
                OutcomeTarget::Y1 => &mut imp_y1,
            };
            for (acc, v) in imp_acc.iter_mut().zip(importance.iter()) {
                *acc += v;
            }
        }

        // Treatment fit on all training pixels.
        let d_train: Vec<u8> = train.iter().map(|&i| data.d[i]).collect();
        let x_train = rows_matrix(&train);
        let mut learner = cfg.learner_binary.clone();
        learner.seed = derive_seed(cfg.learner_binary.seed, &[2, fold as u64]);
        let model =
            fit_binary(&x_train, &d_train, &learner).map_err(|e| fold_context(e, "D", fold))?;
        let x_test = rows_matrix(&test);
        let preds = model.predict(&x_test).map_err(|e| fold_context(e, "D", fold))?;
        for (&row, &p) in test.iter().zip(preds.iter()) {
            d_hat[row] = p;
        }
        for (acc, v) in imp_d.iter_mut().zip(model.variable_importance().iter()) {
            *acc += v;
        }
    }

    let k = folds.k as f64;
    for imp in [&mut imp_y0, &mut imp_y1, &mut imp_d] {
        imp.iter_mut().for_each(|v| *v /= k);
    }

    Ok(FirstStagePredictions {
        y0_hat,
        y1_hat,
        d_hat,
        importance_y0: imp_y0,
        importance_y1: imp_y1,
        importance_d: imp_d,
        feature_names,
        fold_sizes: folds.fold_sizes(),
    })
}

/// Cross-fitted residuals feeding the second stage.
#[derive(Debug, Clone)]
pub struct ResidualPanel {
    /// Outcome residuals per period, present where the outcome was observed.
    pub r0: Vec<Option<f64>>,
    pub r1: Vec<Option<f64>>,
    /// Treatment residual per pixel.
    pub rd: Vec<f64>,
    /// Neighborhood mean of `rd` (zero where no neighbor exists).
    pub rd_bar: Vec<f64>,
    /// Pixels whose neighborhood had no member at all.
    pub unneighbored: Vec<usize>,
}

impl ResidualPanel {
    /// Copy of the panel with the flagged pixels' outcome rows dropped, for
    /// runs that prefer exclusion over zero-filling.
    pub fn without_unneighbored(&self) -> ResidualPanel {
        let mut out = self.clone();
        for &i in &self.unneighbored {
            out.r0[i] = None;
            out.r1[i] = None;
        }
        out
    }
}

/// Compute outcome and treatment residuals plus the neighbor mean.
pub fn residuals(
    data: &GridDataset,
    preds: &FirstStagePredictions,
    nb: &Neighborhood,
) -> Result<ResidualPanel> {
    let n = data.n_pixels();
    if preds.y0_hat.len() != n || preds.y1_hat.len() != n || preds.d_hat.len() != n {
        return Err(Error::Shape("predictions are not aligned with the dataset".into()));
    }
    if nb.n_pixels() != n {
        return Err(Error::Shape("neighborhood is not aligned with the dataset".into()));
    }
    let mut r0 = vec![None; n];
    let mut r1 = vec![None; n];
    for i in 0..n {
        if let Some(y) = data.y0[i] {
            let yhat = preds.y0_hat[i].ok_or_else(|| {
                Error::Shape(format!("missing Y0 prediction for observed pixel {i}"))
            })?;
            r0[i] = Some(y - yhat);
        }
        if let Some(y) = data.y1[i] {
            let yhat = preds.y1_hat[i].ok_or_else(|| {
                Error::Shape(format!("missing Y1 prediction for observed pixel {i}"))
            })?;
            r1[i] = Some(y - yhat);
        }
    }
    let rd: Vec<f64> = (0..n).map(|i| data.d[i] as f64 - preds.d_hat[i]).collect();
    let observed = vec![true; n];
    let means = neighbor_mean_masked(&rd, &observed, nb)?;
    Ok(ResidualPanel {
        r0,
        r1,
        rd,
        rd_bar: means.values,
        unneighbored: means.unneighbored,
    })
}

const FULL_NAMES: [&str; 6] = ["intercept", "t", "r_d", "r_d_bar", "t_r_d", "t_r_d_bar"];
const REDUCED_NAMES: [&str; 4] = ["intercept", "t", "r_d", "t_r_d"];

/// Second-stage regression of outcome residuals on treatment residuals.
///
/// Rows stack both periods; `include_neighbors = false` drops the
/// neighbor-mean columns (the reduced form used with by-block cross-fitting
/// and by the plain OLS baseline structure).
pub fn second_stage(panel: &ResidualPanel, include_neighbors: bool) -> Result<EffectEstimate> {
    let n = panel.rd.len();
    let mut rows: Vec<[f64; 6]> = Vec::new();
    let mut response = Vec::new();
    for i in 0..n {
        for (t, r) in [(0.0, panel.r0[i]), (1.0, panel.r1[i])] {
            if let Some(resid) = r {
                let rd = panel.rd[i];
                let rdb = panel.rd_bar[i];
                rows.push([1.0, t, rd, rdb, t * rd, t * rdb]);
                response.push(resid);
            }
        }
    }
    let n_t0 = rows.iter().filter(|r| r[1] == 0.0).count();
    if n_t0 == 0 || n_t0 == rows.len() {
        return Err(Error::Config(
            "second stage needs at least one observed row in each period".into(),
        ));
    }

    let columns: &[usize] = if include_neighbors { &[0, 1, 2, 3, 4, 5] } else { &[0, 1, 2, 4] };
    let names: Vec<String> = if include_neighbors {
        FULL_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        REDUCED_NAMES.iter().map(|s| s.to_string()).collect()
    };
    let z = DMatrix::from_fn(rows.len(), columns.len(), |i, j| rows[i][columns[j]]);
    let y = DVector::from_vec(response);
    let fit = robust_least_squares(&z, &y, &names)?;
    let gamma_index = if include_neighbors { 4 } else { 3 };
    let method = if include_neighbors { "second-stage" } else { "second-stage-reduced" };
    let mut est = estimate_from_fit(method, fit, names, gamma_index);
    est.push_meta("n_unneighbored", panel.unneighbored.len());
    Ok(est)
}

/// Stack the two periods of a dataset into regression rows.
/// Returns (response, t, pixel index) per stacked row.
fn stacked_rows(data: &GridDataset) -> Vec<(f64, f64, usize)> {
    let mut rows = Vec::new();
    for i in 0..data.n_pixels() {
        if let Some(y) = data.y0[i] {
            rows.push((y, 0.0, i));
        }
        if let Some(y) = data.y1[i] {
            rows.push((y, 1.0, i));
        }
    }
    rows
}

/// Unadjusted OLS baseline: regress the stacked outcomes on covariates,
/// period, treatment, and their interaction; gamma is the interaction
/// coefficient.
pub fn baseline_ols(data: &GridDataset) -> Result<EffectEstimate> {
    let rows = stacked_rows(data);
    if rows.is_empty() {
        return Err(Error::Config("no observed outcomes".into()));
    }
    let p = data.n_covariates();
    let k = 1 + p + 3;
    let mut names = vec!["intercept".to_string()];
    names.extend(data.covariate_names.iter().cloned());
    names.extend(["t".to_string(), "d".to_string(), "t_d".to_string()]);
    let z = DMatrix::from_fn(rows.len(), k, |r, c| {
        let (_, t, i) = rows[r];
        match c {
            0 => 1.0,
            c if c <= p => data.x[(i, c - 1)],
            c if c == p + 1 => t,
            c if c == p + 2 => data.d[i] as f64,
            _ => t * data.d[i] as f64,
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.0));
    let fit = robust_least_squares(&z, &y, &names)?;
    let mut est = estimate_from_fit("OLS", fit, names, k - 1);
    est.push_meta("estimator", "ols");
    Ok(est)
}

/// Spatial difference-in-differences baseline: OLS columns plus the
/// neighborhood treatment fraction and its period interaction.
pub fn baseline_did(data: &GridDataset, nb: &Neighborhood) -> Result<EffectEstimate> {
    let rows = stacked_rows(data);
    if rows.is_empty() {
        return Err(Error::Config("no observed outcomes".into()));
    }
    let d_real: Vec<f64> = data.d.iter().map(|&v| v as f64).collect();
    let observed = vec![true; d_real.len()];
    let d_bar = neighbor_mean_masked(&d_real, &observed, nb)?.values;

    let p = data.n_covariates();
    let k = 1 + p + 5;
    let mut names = vec!["intercept".to_string()];
    names.extend(data.covariate_names.iter().cloned());
    names.extend([
        "t".to_string(),
        "d".to_string(),
        "d_bar".to_string(),
        "t_d".to_string(),
        "t_d_bar".to_string(),
    ]);
    let z = DMatrix::from_fn(rows.len(), k, |r, c| {
        let (_, t, i) = rows[r];
        match c {
            0 => 1.0,
            c if c <= p => data.x[(i, c - 1)],
            c if c == p + 1 => t,
            c if c == p + 2 => d_real[i],
            c if c == p + 3 => d_bar[i],
            c if c == p + 4 => t * d_real[i],
            _ => t * d_bar[i],
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.0));
    let fit = robust_least_squares(&z, &y, &names)?;
    let gamma_index = p + 4;
    let mut est = estimate_from_fit("DID", fit, names, gamma_index);
    est.push_meta("estimator", "did");
    Ok(est)
}

/// Difference in differences of four group means:
/// `(post_T - post_C) - (pre_T - pre_C)`.
pub fn naive_did(
    mean_pre_treated: f64,
    mean_pre_control: f64,
    mean_post_treated: f64,
    mean_post_control: f64,
) -> f64 {
    (mean_post_treated - mean_post_control) - (mean_pre_treated - mean_pre_control)
}

/// End-to-end configuration for one estimator run.
#[derive(Debug, Clone)]
pub struct StdmlConfig {
    pub feature_set: FeatureSet,
    pub cf_mode: CrossFitMode,
    pub k_folds: usize,
    pub re_mode: ReMode,
    pub l_basis: usize,
    pub nb_scheme: NeighborScheme,
    /// Drop pixels lacking observed neighbors from the second stage instead
    /// of zero-filling their neighbor mean.
    pub drop_unneighbored: bool,
    pub seed: u64,
    pub learner_continuous: LearnerConfig,
    pub learner_binary: LearnerConfig,
}

impl StdmlConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            feature_set: FeatureSet::Xsz,
            cf_mode: CrossFitMode::ByPixel,
            k_folds: 10,
            re_mode: ReMode::None,
            l_basis: 100,
            nb_scheme: NeighborScheme::Queen8,
            drop_unneighbored: false,
            seed,
            learner_continuous: LearnerConfig::continuous_default(),
            learner_binary: LearnerConfig::binary_default(),
        }
    }

    pub fn method_name(&self) -> String {
        let cf = match self.cf_mode {
            CrossFitMode::None => "noCF",
            CrossFitMode::ByPixel => "CF",
            CrossFitMode::ByBlock => "blockCF",
        };
        let re = match self.re_mode {
            ReMode::None => "",
            ReMode::BlockRe => "-RE",
        };
        format!("DML-{}-{}{}", self.feature_set.name(), cf, re)
    }
}

/// Run the full two-stage estimator: fold assignment, cross-fitted first
/// stage, residual construction, and the second-stage regression. By-block
/// cross-fitting uses the reduced second stage without neighbor columns.
pub fn run_stdml(data: &GridDataset, config: &StdmlConfig) -> Result<EffectEstimate> {
    let folds = assign_folds(data, config.k_folds, config.cf_mode, derive_seed(config.seed, &[10]))?;
    let mut learner_continuous = config.learner_continuous.clone();
    learner_continuous.seed = derive_seed(config.seed, &[11]);
    let mut learner_binary = config.learner_binary.clone();
    learner_binary.seed = derive_seed(config.seed, &[12]);
    let stage_cfg = FirstStageConfig {
        feature_set: config.feature_set,
        re_mode: config.re_mode,
        l_basis: config.l_basis,
        learner_continuous,
        learner_binary,
    };
    let preds = first_stage(data, &folds, &stage_cfg)?;
    let nb = Neighborhood::build(&data.grid, config.nb_scheme);
    let panel = residuals(data, &preds, &nb)?;
    let panel = if config.drop_unneighbored { panel.without_unneighbored() } else { panel };
    let include_neighbors = config.cf_mode != CrossFitMode::ByBlock;
    let mut est = second_stage(&panel, include_neighbors)?;
    est.method = config.method_name();
    est.push_meta("feature_set", config.feature_set.name());
    est.push_meta("cf_mode", config.cf_mode.name());
    est.push_meta("k_folds", folds.k);
    est.push_meta("re_mode", config.re_mode.name());
    est.push_meta("l_basis", config.l_basis);
    est.push_meta("nb_scheme", config.nb_scheme.name());
    est.push_meta("drop_unneighbored", config.drop_unneighbored);
    est.push_meta("seed", config.seed);
    est.push_meta(
        "fold_sizes",
        preds
            .fold_sizes
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("|"),
    );
    est.push_meta("n_pixels", data.n_pixels());
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::NeighborScheme;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn small_dataset(n_side: usize, seed: u64) -> GridDataset {
        let grid = Grid::unit_square(n_side).unwrap();
        let n = grid.n_pixels();
        let mut rng = rng_from_seed(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let d: Vec<u8> = (0..n).map(|i| u8::from(x[(i, 0)] > 0.0)).collect();
        let y0: Vec<Option<f64>> =
            (0..n).map(|i| Some(x[(i, 0)] + 0.1 * rng.random::<f64>())).collect();
        let y1: Vec<Option<f64>> = (0..n)
            .map(|i| Some(x[(i, 0)] + d[i] as f64 * 2.0 + 0.1 * rng.random::<f64>()))
            .collect();
        GridDataset::new(
            grid,
            y0,
            y1,
            d,
            x,
            vec!["x1".into(), "x2".into()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn fold_sizes_differ_by_at_most_one() {
        let data = small_dataset(32, 1);
        let folds = assign_folds(&data, 10, CrossFitMode::ByPixel, 3).unwrap();
        let sizes = folds.fold_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 1024);
        assert!(sizes.iter().all(|&s| s == 102 || s == 103), "{sizes:?}");
        // Deterministic under the seed.
        let again = assign_folds(&data, 10, CrossFitMode::ByPixel, 3).unwrap();
        assert_eq!(folds.labels, again.labels);
    }

    #[test]
    fn by_block_folds_never_straddle_blocks() {
        let mut data = small_dataset(16, 2);
        data.blocks = Some(BlockPartition::tiles(&data.grid, 4, 4).unwrap());
        let folds = assign_folds(&data, 4, CrossFitMode::ByBlock, 5).unwrap();
        let blocks = data.blocks.as_ref().unwrap();
        for (i, &label) in folds.labels.iter().enumerate() {
            let block = blocks.label_of(i);
            let first = blocks.labels().iter().position(|&g| g == block).unwrap();
            assert_eq!(label, folds.labels[first]);
        }
    }

    #[test]
    fn mode_none_uses_single_fold() {
        let data = small_dataset(8, 3);
        let folds = assign_folds(&data, 10, CrossFitMode::None, 1).unwrap();
        assert_eq!(folds.k, 1);
        assert!(folds.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn fold_errors() {
        let data = small_dataset(4, 4);
        assert!(assign_folds(&data, 17, CrossFitMode::ByPixel, 1).is_err());
        assert!(assign_folds(&data, 1, CrossFitMode::ByPixel, 1).is_err());
        assert!(assign_folds(&data, 2, CrossFitMode::ByBlock, 1).is_err());
    }

    #[test]
    fn residuals_zero_under_perfect_predictions() {
        let data = small_dataset(6, 5);
        let n = data.n_pixels();
        let preds = FirstStagePredictions {
            y0_hat: data.y0.clone(),
            y1_hat: data.y1.clone(),
            d_hat: data.d.iter().map(|&v| v as f64).collect(),
            importance_y0: vec![],
            importance_y1: vec![],
            importance_d: vec![],
            feature_names: vec![],
            fold_sizes: vec![n],
        };
        let nb = Neighborhood::build(&data.grid, NeighborScheme::Queen8);
        let panel = residuals(&data, &preds, &nb).unwrap();
        assert!(panel.r0.iter().all(|r| r.unwrap().abs() < 1e-15));
        assert!(panel.r1.iter().all(|r| r.unwrap().abs() < 1e-15));
        assert!(panel.rd.iter().all(|&r| r == 0.0));
        assert!(panel.rd_bar.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn half_propensity_gives_half_unit_treatment_residuals() {
        let data = small_dataset(6, 6);
        let n = data.n_pixels();
        let preds = FirstStagePredictions {
            y0_hat: data.y0.clone(),
            y1_hat: data.y1.clone(),
            d_hat: vec![0.5; n],
            importance_y0: vec![],
            importance_y1: vec![],
            importance_d: vec![],
            feature_names: vec![],
            fold_sizes: vec![n],
        };
        let nb = Neighborhood::build(&data.grid, NeighborScheme::Queen8);
        let panel = residuals(&data, &preds, &nb).unwrap();
        assert!(panel.rd.iter().all(|&r| r == 0.5 || r == -0.5));
    }

    #[test]
    fn constant_treatment_residual_propagates_to_neighbor_mean() {
        let data = small_dataset(5, 7);
        let n = data.n_pixels();
        let preds = FirstStagePredictions {
            y0_hat: data.y0.clone(),
            y1_hat: data.y1.clone(),
            // every pixel treated in this fake input, prediction 0.25
            d_hat: vec![0.25; n],
            importance_y0: vec![],
            importance_y1: vec![],
            importance_d: vec![],
            feature_names: vec![],
            fold_sizes: vec![n],
        };
        let mut data = data;
        data.d = vec![1; n];
        let nb = Neighborhood::build(&data.grid, NeighborScheme::Queen8);
        let panel = residuals(&data, &preds, &nb).unwrap();
        for &m in &panel.rd_bar {
            assert_abs_diff_eq!(m, 0.75, epsilon = 1e-14);
        }
    }

    fn synthetic_panel(n_side: usize, seed: u64) -> ResidualPanel {
        let grid = Grid::unit_square(n_side).unwrap();
        let n = grid.n_pixels();
        let mut rng = rng_from_seed(seed);
        let rd: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let nb = Neighborhood::build(&grid, NeighborScheme::Queen8);
        let observed = vec![true; n];
        let rd_bar = neighbor_mean_masked(&rd, &observed, &nb).unwrap().values;
        let r0: Vec<Option<f64>> = (0..n).map(|_| Some(rng.random::<f64>())).collect();
        let r1: Vec<Option<f64>> =
            (0..n).map(|i| Some(3.0 * rd[i] + rng.random::<f64>())).collect();
        ResidualPanel { r0, r1, rd, rd_bar, unneighbored: vec![] }
    }

    #[test]
    fn second_stage_translation_shifts_intercept_only() {
        let panel = synthetic_panel(8, 8);
        let base = second_stage(&panel, true).unwrap();
        let mut shifted = panel.clone();
        for r in shifted.r0.iter_mut().chain(shifted.r1.iter_mut()) {
            *r = r.map(|v| v + 5.0);
        }
        let moved = second_stage(&shifted, true).unwrap();
        assert_abs_diff_eq!(moved.theta[0], base.theta[0] + 5.0, epsilon = 1e-10);
        assert_abs_diff_eq!(moved.gamma, base.gamma, epsilon = 1e-10);
    }

    #[test]
    fn second_stage_time_relabel_negates_gamma() {
        let panel = synthetic_panel(8, 9);
        let base = second_stage(&panel, true).unwrap();
        let swapped = ResidualPanel {
            r0: panel.r1.clone(),
            r1: panel.r0.clone(),
            rd: panel.rd.clone(),
            rd_bar: panel.rd_bar.clone(),
            unneighbored: vec![],
        };
        let flipped = second_stage(&swapped, true).unwrap();
        assert_abs_diff_eq!(flipped.gamma, -base.gamma, epsilon = 1e-10);
    }

    #[test]
    fn reduced_model_nests_when_neighbor_means_vanish() {
        let mut panel = synthetic_panel(8, 10);
        panel.rd_bar = vec![0.0; panel.rd.len()];
        let full = second_stage(&panel, true).unwrap();
        let reduced = second_stage(&panel, false).unwrap();
        for name in ["intercept", "t", "r_d", "t_r_d"] {
            let a = full.coefficient(name).unwrap();
            let b = reduced.coefficient(name).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert_eq!(full.coefficient("r_d_bar").unwrap(), 0.0);
        assert_eq!(full.coefficient("t_r_d_bar").unwrap(), 0.0);
    }

    #[test]
    fn naive_did_matches_reported_arithmetic() {
        // Group means: pre-treated 0.037, pre-control 0.024,
        // post-treated 0.162, post-control 0.029.
        let got = naive_did(0.037, 0.024, 0.162, 0.029);
        assert_abs_diff_eq!(got, 0.120, epsilon = 1e-12);
        assert_eq!(naive_did(0.3, 0.3, 0.3, 0.3), 0.0);
        assert_eq!(naive_did(0.0, 0.0, 1.0, 0.0), 1.0);
    }

    #[test]
    fn baseline_ols_recovers_exact_generating_coefficients() {
        let grid = Grid::new(2, 2, 1.0, (0.0, 0.0)).unwrap();
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let d = vec![0u8, 0, 1, 1];
        // y = 2 + 1.5 x + 0.5 t + 1 d + 3 t d, no noise
        let y_at = |i: usize, t: f64| {
            2.0 + 1.5 * x[(i, 0)] + 0.5 * t + d[i] as f64 + 3.0 * t * d[i] as f64
        };
        let y0: Vec<Option<f64>> = (0..4).map(|i| Some(y_at(i, 0.0))).collect();
        let y1: Vec<Option<f64>> = (0..4).map(|i| Some(y_at(i, 1.0))).collect();
        let data =
            GridDataset::new(grid, y0, y1, d, x, vec!["x1".into()], None).unwrap();
        let est = baseline_ols(&data).unwrap();
        let expect = [2.0, 1.5, 0.5, 1.0, 3.0];
        for (got, want) in est.theta.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(est.gamma, 3.0, epsilon = 1e-10);
        assert!(est.gamma_se < 1e-9);
    }

    #[test]
    fn baseline_did_errors_on_constant_treatment() {
        let mut data = small_dataset(5, 11);
        data.d = vec![1; data.n_pixels()];
        let nb = Neighborhood::build(&data.grid, NeighborScheme::Queen8);
        match baseline_did(&data, &nb) {
            Err(Error::Singular { columns }) => {
                assert!(!columns.is_empty());
            }
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn knots_per_side_requires_perfect_square() {
        assert_eq!(knots_per_side(100).unwrap(), 10);
        assert_eq!(knots_per_side(49).unwrap(), 7);
        assert!(knots_per_side(50).is_err());
        assert!(knots_per_side(1).is_err());
    }

    #[test]
    fn build_features_shapes() {
        let data = small_dataset(6, 12);
        let (fx, names_x) = build_features(&data, FeatureSet::X, 0).unwrap();
        assert_eq!(fx.ncols(), 2);
        assert_eq!(names_x, vec!["x1", "x2"]);
        let (fxs, _) = build_features(&data, FeatureSet::XS, 0).unwrap();
        assert_eq!(fxs.ncols(), 4);
        let (fxsz, names_xsz) = build_features(&data, FeatureSet::Xsz, 16).unwrap();
        assert_eq!(fxsz.ncols(), 2 + 2 + 16);
        assert_eq!(names_xsz.last().unwrap(), "z16");
    }
}
