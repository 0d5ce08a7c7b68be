//! Monte Carlo harness: run method-by-scenario sweeps over replicates with
//! paired datasets, aggregate bias / MSE / CI length / coverage with Monte
//! Carlo standard errors, and render comparison tables.

mod svg;

pub use svg::{boxplot_svg, interval_svg};

use rayon::prelude::*;

use crate::dgp::{simulate_block, simulate_pixel, BlockSimConfig, PixelSimConfig, TruthRecord};
use crate::dml::{
    baseline_did, baseline_ols, run_stdml, CrossFitMode, EffectEstimate, FeatureSet, GridDataset,
    ReMode, StdmlConfig,
};
use crate::error::{Error, Result};
use crate::lattice::{Neighborhood, NeighborScheme};
use crate::rng::derive_seed;
use crate::treelearn::LearnerConfig;

/// Estimator options for one sweep row.
#[derive(Debug, Clone)]
pub struct StdmlOptions {
    pub feature_set: FeatureSet,
    pub cf_mode: CrossFitMode,
    pub k_folds: usize,
    pub re_mode: ReMode,
    pub l_basis: usize,
}

#[derive(Debug, Clone)]
pub enum MethodKind {
    Ols,
    Did,
    Stdml(StdmlOptions),
}

#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub name: String,
    pub kind: MethodKind,
}

impl MethodSpec {
    pub fn ols() -> Self {
        Self { name: "OLS".into(), kind: MethodKind::Ols }
    }

    pub fn did() -> Self {
        Self { name: "DID".into(), kind: MethodKind::Did }
    }

    pub fn stdml(name: &str, options: StdmlOptions) -> Self {
        Self { name: name.into(), kind: MethodKind::Stdml(options) }
    }

    fn needs_blocks(&self) -> bool {
        match &self.kind {
            MethodKind::Stdml(o) => {
                o.cf_mode == CrossFitMode::ByBlock || o.re_mode == ReMode::BlockRe
            }
            _ => false,
        }
    }
}

/// The eight pixel-design rows: baselines plus feature set by cross-fitting.
pub fn table1_methods(l_basis: usize) -> Vec<MethodSpec> {
    let mut methods = vec![MethodSpec::ols(), MethodSpec::did()];
    for set in [FeatureSet::X, FeatureSet::XS, FeatureSet::Xsz] {
        for (cf, tag) in [(CrossFitMode::None, "noCF"), (CrossFitMode::ByPixel, "CF")] {
            methods.push(MethodSpec::stdml(
                &format!("DML-{}-{}", set.name(), tag),
                StdmlOptions {
                    feature_set: set,
                    cf_mode: cf,
                    k_folds: 10,
                    re_mode: ReMode::None,
                    l_basis,
                },
            ));
        }
    }
    methods
}

/// The eight block-design rows: baselines plus random effects by
/// cross-fitting mode; all tree fits use the full spatial feature set.
pub fn table2_methods(l_basis: usize) -> Vec<MethodSpec> {
    let mut methods = vec![MethodSpec::ols(), MethodSpec::did()];
    for (re, re_tag) in [(ReMode::None, "noRE"), (ReMode::BlockRe, "RE")] {
        for (cf, cf_tag) in [
            (CrossFitMode::None, "noCF"),
            (CrossFitMode::ByPixel, "pixelCF"),
            (CrossFitMode::ByBlock, "blockCF"),
        ] {
            methods.push(MethodSpec::stdml(
                &format!("DML-{re_tag}-{cf_tag}"),
                StdmlOptions {
                    feature_set: FeatureSet::Xsz,
                    cf_mode: cf,
                    k_folds: 10,
                    re_mode: re,
                    l_basis,
                },
            ));
        }
    }
    methods
}

/// A simulation scenario with per-replicate reseeding.
#[derive(Debug, Clone)]
pub enum Scenario {
    Pixel(PixelSimConfig),
    Block(BlockSimConfig),
}

impl Scenario {
    pub fn label(&self) -> String {
        match self {
            Scenario::Pixel(c) => format!("pixel nu={} m={}", c.nu, c.m),
            Scenario::Block(c) => format!("block nu={} m={}", c.nu, c.m),
        }
    }

    pub fn gamma_true(&self) -> f64 {
        match self {
            Scenario::Pixel(c) => c.gamma,
            Scenario::Block(c) => c.gamma,
        }
    }

    pub fn has_blocks(&self) -> bool {
        matches!(self, Scenario::Block(_))
    }

    pub fn generate(&self, seed: u64) -> Result<(GridDataset, TruthRecord)> {
        match self {
            Scenario::Pixel(c) => simulate_pixel(&PixelSimConfig { seed, ..c.clone() }),
            Scenario::Block(c) => simulate_block(&BlockSimConfig { seed, ..c.clone() }),
        }
    }
}

/// Sweep execution settings. The learner presets here are the desk-scale
/// defaults for simulation sweeps; single fits elsewhere use the full
/// package-style defaults.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n_reps: usize,
    pub seed: u64,
    pub nb_scheme: NeighborScheme,
    pub learner_continuous: LearnerConfig,
    pub learner_binary: LearnerConfig,
    pub parallel: bool,
}

impl SweepConfig {
    pub fn new(n_reps: usize, seed: u64) -> Self {
        Self {
            n_reps,
            seed,
            nb_scheme: NeighborScheme::Queen8,
            learner_continuous: LearnerConfig {
                n_trees: 150,
                burn_in: 75,
                kept_draws: 200,
                ..LearnerConfig::continuous_default()
            },
            learner_binary: LearnerConfig {
                n_trees: 50,
                burn_in: 75,
                kept_draws: 200,
                ..LearnerConfig::binary_default()
            },
            parallel: true,
        }
    }
}

/// One method's estimate on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRecord {
    pub gamma: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl GammaRecord {
    fn from_estimate(est: &EffectEstimate) -> Self {
        Self {
            gamma: est.gamma,
            se: est.gamma_se,
            ci_lower: est.ci_lower,
            ci_upper: est.ci_upper,
        }
    }
}

/// Aggregated comparison metrics with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub method: String,
    pub bias: f64,
    pub bias_se: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub ci_length: f64,
    pub ci_length_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub n_replicates: usize,
    pub n_failures: usize,
}

/// Full sweep output: per-replicate records plus the summary table.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub scenario_label: String,
    pub gamma_true: f64,
    pub seed: u64,
    pub n_reps: usize,
    pub method_names: Vec<String>,
    /// `records[method][replicate]`; `None` marks a failed replicate.
    pub records: Vec<Vec<Option<GammaRecord>>>,
    pub summaries: Vec<MetricSummary>,
}

impl SweepResult {
    pub fn summary(&self, method: &str) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn gamma_draws(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|per_rep| per_rep.iter().flatten().map(|r| r.gamma).collect())
            .collect()
    }
}

fn evaluate_method(
    method: &MethodSpec,
    data: &GridDataset,
    nb: &Neighborhood,
    rep_seed: u64,
    cfg: &SweepConfig,
) -> Result<EffectEstimate> {
    match &method.kind {
        MethodKind::Ols => baseline_ols(data),
        MethodKind::Did => baseline_did(data, nb),
        MethodKind::Stdml(options) => {
            let mut run_cfg = StdmlConfig::new(rep_seed);
            run_cfg.feature_set = options.feature_set;
            run_cfg.cf_mode = options.cf_mode;
            run_cfg.k_folds = options.k_folds;
            run_cfg.re_mode = options.re_mode;
            run_cfg.l_basis = options.l_basis;
            run_cfg.nb_scheme = cfg.nb_scheme;
            run_cfg.learner_continuous = cfg.learner_continuous.clone();
            run_cfg.learner_binary = cfg.learner_binary.clone();
            run_stdml(data, &run_cfg)
        }
    }
}

fn run_replicate(
    scenario: &Scenario,
    methods: &[MethodSpec],
    cfg: &SweepConfig,
    rep: usize,
) -> Result<(Vec<Option<GammaRecord>>, Vec<String>)> {
    let rep_seed = derive_seed(cfg.seed, &[rep as u64]);
    let (data, _truth) = scenario.generate(rep_seed)?;
    let nb = Neighborhood::build(&data.grid, cfg.nb_scheme);
    let mut records = Vec::with_capacity(methods.len());
    let mut failures = Vec::new();
    for method in methods {
        match evaluate_method(method, &data, &nb, rep_seed, cfg) {
            Ok(est) => records.push(Some(GammaRecord::from_estimate(&est))),
            Err(e) => {
                failures.push(format!("rep {rep} method {}: {e}", method.name));
                records.push(None);
            }
        }
    }
    Ok((records, failures))
}

/// Run every method on every replicate. All methods see byte-identical
/// datasets within a replicate, and replicate seeds derive from the master
/// seed, so results do not depend on the execution schedule.
pub fn run_sweep(
    scenario: &Scenario,
    methods: &[MethodSpec],
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    if cfg.n_reps < 2 {
        return Err(Error::Config("a sweep needs at least 2 replicates".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods given".into()));
    }
    if !scenario.has_blocks() {
        if let Some(bad) = methods.iter().find(|m| m.needs_blocks()) {
            return Err(Error::Config(format!(
                "method {} needs block structure but the scenario has none",
                bad.name
            )));
        }
    }

    let replicate_results: Vec<Result<(Vec<Option<GammaRecord>>, Vec<String>)>> = if cfg.parallel {
        (0..cfg.n_reps)
            .into_par_iter()
            .map(|rep| run_replicate(scenario, methods, cfg, rep))
            .collect()
    } else {
        (0..cfg.n_reps).map(|rep| run_replicate(scenario, methods, cfg, rep)).collect()
    };

    let mut records: Vec<Vec<Option<GammaRecord>>> =
        vec![Vec::with_capacity(cfg.n_reps); methods.len()];
    let mut failure_log = Vec::new();
    for rep_result in replicate_results {
        let (rep_records, failures) = rep_result?;
        failure_log.extend(failures);
        for (m, record) in rep_records.into_iter().enumerate() {
            records[m].push(record);
        }
    }

    let max_failures = cfg.n_reps / 10;
    for (m, method) in methods.iter().enumerate() {
        let failed = records[m].iter().filter(|r| r.is_none()).count();
        if failed > max_failures {
            return Err(Error::Numerical(format!(
                "method {} failed on {failed}/{} replicates:\n{}",
                method.name,
                cfg.n_reps,
                failure_log.join("\n")
            )));
        }
    }
    if !failure_log.is_empty() {
        log::warn!("sweep had replicate failures:\n{}", failure_log.join("\n"));
    }

    let gamma_true = scenario.gamma_true();
    let summaries = methods
        .iter()
        .zip(records.iter())
        .map(|(method, per_rep)| aggregate(&method.name, per_rep, gamma_true))
        .collect();

    Ok(SweepResult {
        scenario_label: scenario.label(),
        gamma_true,
        seed: cfg.seed,
        n_reps: cfg.n_reps,
        method_names: methods.iter().map(|m| m.name.clone()).collect(),
        records,
        summaries,
    })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregate one method's replicate records into the comparison metrics.
pub fn aggregate(method: &str, per_rep: &[Option<GammaRecord>], gamma_true: f64) -> MetricSummary {
    let ok: Vec<&GammaRecord> = per_rep.iter().flatten().collect();
    let n = ok.len();
    let n_failures = per_rep.len() - n;
    if n == 0 {
        return MetricSummary {
            method: method.into(),
            bias: f64::NAN,
            bias_se: f64::NAN,
            mse: f64::NAN,
            mse_se: f64::NAN,
            ci_length: f64::NAN,
            ci_length_se: f64::NAN,
            coverage: f64::NAN,
            coverage_se: f64::NAN,
            n_replicates: 0,
            n_failures,
        };
    }
    let errors: Vec<f64> = ok.iter().map(|r| r.gamma - gamma_true).collect();
    let sq_errors: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let lengths: Vec<f64> = ok.iter().map(|r| r.ci_upper - r.ci_lower).collect();
    let covered = ok.iter().filter(|r| r.ci_lower <= gamma_true && gamma_true <= r.ci_upper);
    let coverage = covered.count() as f64 / n as f64;

    let (bias, bias_se) = mean_and_se(&errors);
    let (mse, mse_se) = mean_and_se(&sq_errors);
    let (ci_length, ci_length_se) = mean_and_se(&lengths);
    MetricSummary {
        method: method.into(),
        bias,
        bias_se,
        mse,
        mse_se,
        ci_length,
        ci_length_se,
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / n as f64).sqrt(),
        n_replicates: n,
        n_failures,
    }
}

/// Fixed-precision text table in the comparison layout:
/// Method | Bias | MSE | CI length | Coverage.
pub fn render_table(result: &SweepResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Scenario: {} (gamma={}, {} replicates, seed {})\n",
        result.scenario_label, result.gamma_true, result.n_reps, result.seed
    ));
    let name_width = result
        .summaries
        .iter()
        .map(|s| s.method.len())
        .max()
        .unwrap_or(6)
        .max(6);
    out.push_str(&format!(
        "{:<name_width$}  {:>8}  {:>8}  {:>9}  {:>8}\n",
        "Method", "Bias", "MSE", "CI length", "Coverage"
    ));
    for s in &result.summaries {
        out.push_str(&format!(
            "{:<name_width$}  {:>8.3}  {:>8.3}  {:>9.3}  {:>8.3}\n",
            s.method, s.bias, s.mse, s.ci_length, s.coverage
        ));
    }
    out
}

const CSV_HEADER: &str = "method,bias,bias_se,mse,mse_se,ci_length,ci_length_se,coverage,coverage_se,n_replicates,n_failures";

/// Full-precision CSV of the summaries (no header comments; callers prepend
/// their provenance block).
pub fn render_csv(result: &SweepResult) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in &result.summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            s.method,
            s.bias,
            s.bias_se,
            s.mse,
            s.mse_se,
            s.ci_length,
            s.ci_length_se,
            s.coverage,
            s.coverage_se,
            s.n_replicates,
            s.n_failures
        ));
    }
    out
}

/// Parse a summaries CSV back (comment lines ignored); exact inverse of
/// [`render_csv`] for finite values.
pub fn parse_csv(text: &str) -> Result<Vec<MetricSummary>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Validation(vec!["empty CSV".into()]))?;
    if header.trim() != CSV_HEADER {
        return Err(Error::Validation(vec![format!("unexpected CSV header: {header}")]));
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Validation(vec![format!(
                "line {}: expected 11 fields, got {}",
                idx + 2,
                fields.len()
            )]));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                Error::Validation(vec![format!("line {}: bad {what} '{s}'", idx + 2)])
            })
        };
        out.push(MetricSummary {
            method: fields[0].to_string(),
            bias: parse_f(fields[1], "bias")?,
            bias_se: parse_f(fields[2], "bias_se")?,
            mse: parse_f(fields[3], "mse")?,
            mse_se: parse_f(fields[4], "mse_se")?,
            ci_length: parse_f(fields[5], "ci_length")?,
            ci_length_se: parse_f(fields[6], "ci_length_se")?,
            coverage: parse_f(fields[7], "coverage")?,
            coverage_se: parse_f(fields[8], "coverage_se")?,
            n_replicates: fields[9]
                .parse()
                .map_err(|_| Error::Validation(vec![format!("line {}: bad count", idx + 2)]))?,
            n_failures: fields[10]
                .parse()
                .map_err(|_| Error::Validation(vec![format!("line {}: bad count", idx + 2)]))?,
        });
    }
    Ok(out)
}

/// Content fingerprint of a dataset, for paired-design checks.
pub fn dataset_fingerprint(data: &GridDataset) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut mix = |bits: u64| {
        h ^= bits;
        h = h.wrapping_mul(0x1000_0000_01b3);
    };
    for v in &data.d {
        mix(*v as u64);
    }
    for y in data.y0.iter().chain(data.y1.iter()) {
        match y {
            Some(v) => mix(v.to_bits()),
            None => mix(u64::MAX),
        }
    }
    for v in data.x.iter() {
        mix(v.to_bits());
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn metric_identity_mse_equals_bias_sq_plus_variance() {
        let gammas = [2.1, 3.4, 2.9, 3.3, 2.6, 3.8];
        let records: Vec<Option<GammaRecord>> = gammas
            .iter()
            .map(|&g| Some(GammaRecord { gamma: g, se: 0.1, ci_lower: g - 0.2, ci_upper: g + 0.2 }))
            .collect();
        let s = aggregate("m", &records, 3.0);
        let r = gammas.len() as f64;
        let mean = gammas.iter().sum::<f64>() / r;
        let var = gammas.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (r - 1.0);
        let expected_mse = s.bias * s.bias + (1.0 - 1.0 / r) * var;
        assert_abs_diff_eq!(s.mse, expected_mse, epsilon = 1e-12);
        assert_abs_diff_eq!(
            s.coverage_se,
            (s.coverage * (1.0 - s.coverage) / r).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn csv_round_trips_at_full_precision() {
        let result = SweepResult {
            scenario_label: "test".into(),
            gamma_true: 3.0,
            seed: 5,
            n_reps: 3,
            method_names: vec!["A".into(), "B".into()],
            records: vec![
                vec![
                    Some(GammaRecord { gamma: 2.987654321012345, se: 0.1, ci_lower: 2.5, ci_upper: 3.5 }),
                    Some(GammaRecord { gamma: 3.1, se: 0.2, ci_lower: 2.7, ci_upper: 3.6 }),
                    None,
                ],
                vec![
                    Some(GammaRecord { gamma: 0.333333333333333, se: 0.3, ci_lower: -0.3, ci_upper: 0.9 }),
                    Some(GammaRecord { gamma: 1.0 / 3.0, se: 0.3, ci_lower: -0.25, ci_upper: 0.95 }),
                    Some(GammaRecord { gamma: 2.0f64.sqrt(), se: 0.3, ci_lower: 1.0, ci_upper: 1.9 }),
                ],
            ],
            summaries: vec![],
        };
        let mut result = result;
        result.summaries = result
            .method_names
            .iter()
            .zip(result.records.iter())
            .map(|(name, recs)| aggregate(name, recs, result.gamma_true))
            .collect();
        let csv = render_csv(&result);
        let parsed = parse_csv(&csv).unwrap();
        assert_eq!(parsed, result.summaries);
    }

    #[test]
    fn single_method_single_row_table() {
        let records = vec![
            Some(GammaRecord { gamma: 3.2, se: 0.1, ci_lower: 3.0, ci_upper: 3.4 }),
            Some(GammaRecord { gamma: 2.9, se: 0.1, ci_lower: 2.7, ci_upper: 3.1 }),
        ];
        let result = SweepResult {
            scenario_label: "tiny".into(),
            gamma_true: 3.0,
            seed: 1,
            n_reps: 2,
            method_names: vec!["ONLY".into()],
            records: vec![records.clone()],
            summaries: vec![aggregate("ONLY", &records, 3.0)],
        };
        let table = render_table(&result);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("Bias") && lines[1].contains("Coverage"));
        assert!(lines[2].starts_with("ONLY"));
        // Column order: Bias MSE CI length Coverage
        let bias_pos = lines[1].find("Bias").unwrap();
        let mse_pos = lines[1].find("MSE").unwrap();
        let ci_pos = lines[1].find("CI length").unwrap();
        let cov_pos = lines[1].find("Coverage").unwrap();
        assert!(bias_pos < mse_pos && mse_pos < ci_pos && ci_pos < cov_pos);
    }

    #[test]
    fn svg_renders_boxes_and_reference() {
        let svg = boxplot_svg(
            "sweep",
            &["A".into(), "B".into()],
            &[vec![2.5, 3.0, 3.5, 2.8], vec![1.0, 4.0, 2.0, 3.0]],
            3.0,
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("truth 3"));
        assert!(svg.matches("<rect").count() == 2);
    }
}
