//! Verb implementations behind the command-line interface.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dgp::{simulate_block, simulate_pixel, BlockSimConfig, PixelSimConfig};
use crate::dml::{
    assign_folds, baseline_did, baseline_ols, first_stage, run_stdml, CrossFitMode,
    EffectEstimate, FeatureSet, FirstStageConfig, GridDataset, ReMode, StdmlConfig,
};
use crate::error::{Error, Result};
use crate::lattice::{Neighborhood, NeighborScheme};
use crate::mc::{
    boxplot_svg, interval_svg, parse_csv, render_csv, render_table, run_sweep, table1_methods,
    table2_methods, MethodSpec, Scenario, SweepConfig,
};
use crate::rng::derive_seed;
use crate::treelearn::LearnerConfig;

use super::config::RunConfig;
use super::ingest::{dataset_summary, export_dataset, ingest};

fn provenance(verb: &str, cfg: &RunConfig) -> Vec<(String, String)> {
    let mut meta = vec![("verb".to_string(), verb.to_string())];
    meta.extend(cfg.resolved());
    meta
}

fn comment_block(meta: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}={v}");
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_learners(cfg: &RunConfig, sweep_defaults: bool) -> Result<(LearnerConfig, LearnerConfig)> {
    let (mut cont, mut bin) = if sweep_defaults {
        let sc = SweepConfig::new(2, 0);
        (sc.learner_continuous, sc.learner_binary)
    } else {
        (LearnerConfig::continuous_default(), LearnerConfig::binary_default())
    };
    if let Some(trees) = cfg.parse_opt::<usize>("trees")? {
        cont.n_trees = trees;
    }
    if let Some(btrees) = cfg.parse_opt::<usize>("btrees")? {
        bin.n_trees = btrees;
    }
    for learner in [&mut cont, &mut bin] {
        if let Some(burn) = cfg.parse_opt::<usize>("burn")? {
            learner.burn_in = burn;
        }
        if let Some(kept) = cfg.parse_opt::<usize>("kept")? {
            learner.kept_draws = kept;
        }
    }
    Ok((cont, bin))
}

fn parse_stdml_config(cfg: &RunConfig, seed: u64, sweep_defaults: bool) -> Result<StdmlConfig> {
    let mut out = StdmlConfig::new(seed);
    out.feature_set = FeatureSet::parse(cfg.get_or("features", "xsz"))?;
    out.cf_mode = CrossFitMode::parse(cfg.get_or("cf", "pixel"))?;
    out.k_folds = cfg.parse_or("k", 10)?;
    out.re_mode = ReMode::parse(cfg.get_or("re", "none"))?;
    out.l_basis = cfg.parse_or("l", 100)?;
    out.nb_scheme = NeighborScheme::parse(cfg.get_or("nb", "queen8"))?;
    out.drop_unneighbored = cfg.parse_or("drop-unneighbored", false)?;
    let (cont, bin) = parse_learners(cfg, sweep_defaults)?;
    out.learner_continuous = cont;
    out.learner_binary = bin;
    Ok(out)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let seed: u64 = cfg.require_parse("seed")?;
    let out_path = PathBuf::from(cfg.require("out")?);
    let design = cfg.get_or("design", "pixel");
    let nu: f64 = cfg.parse_or("nu", 2.0)?;
    let m: usize = cfg.parse_or("m", 32)?;

    let (data, truth) = match design {
        "pixel" => {
            let mut sim = PixelSimConfig::new(nu, seed);
            sim.m = m;
            sim.rho = cfg.parse_or("rho", sim.rho)?;
            sim.sigma2 = cfg.parse_or("sigma2", sim.sigma2)?;
            sim.gamma = cfg.parse_or("gamma", sim.gamma)?;
            sim.missing_frac = cfg.parse_or("missing", sim.missing_frac)?;
            sim.logit_temperature = cfg.parse_or("temperature", sim.logit_temperature)?;
            simulate_pixel(&sim)?
        }
        "block" => {
            let mut sim = BlockSimConfig::new(nu, seed);
            sim.m = m;
            sim.rho = cfg.parse_or("rho", sim.rho)?;
            sim.sigma2 = cfg.parse_or("sigma2", sim.sigma2)?;
            sim.tau2 = cfg.parse_or("tau2", sim.tau2)?;
            sim.gamma = cfg.parse_or("gamma", sim.gamma)?;
            sim.block_side = cfg.parse_or("block-side", sim.block_side)?;
            sim.logit_temperature = cfg.parse_or("temperature", sim.logit_temperature)?;
            simulate_block(&sim)?
        }
        other => return Err(Error::Usage(format!("unknown design '{other}'"))),
    };

    let meta = provenance("simulate", cfg);
    write_file(&out_path, &export_dataset(&data, &meta))?;
    println!("{}", dataset_summary(&data));

    if let Some(truth_path) = cfg.get("truth") {
        let mut text = String::from("# stdml-truth v1\n");
        text.push_str(&comment_block(&meta));
        let _ = writeln!(text, "# gamma={}", truth.gamma);
        let _ = writeln!(text, "# treatment_regenerations={}", truth.treatment_regenerations);
        text.push_str("row,col,x1,x2,x3,x4,x5,prob");
        let has_alpha = truth.alpha_blocks.is_some();
        if has_alpha {
            text.push_str(",alpha");
        }
        text.push('\n');
        let blocks = data.blocks.as_ref();
        for i in 0..data.n_pixels() {
            let (r, c) = data.grid.row_col(i);
            let _ = write!(text, "{r},{c}");
            for j in 0..5 {
                let _ = write!(text, ",{}", truth.covariates[(i, j)]);
            }
            let _ = write!(text, ",{}", truth.treatment_prob[i]);
            if let (Some(alpha), Some(blocks)) = (&truth.alpha_blocks, blocks) {
                let _ = write!(text, ",{}", alpha[blocks.label_of(i)]);
            }
            text.push('\n');
        }
        write_file(Path::new(truth_path), &text)?;
    }
    Ok(())
}

fn naive_did_line(data: &GridDataset) -> Option<String> {
    let mut sums = [[0.0f64; 2]; 2]; // [period][treated]
    let mut counts = [[0usize; 2]; 2];
    for i in 0..data.n_pixels() {
        let t = data.d[i] as usize;
        if let Some(y) = data.y0[i] {
            sums[0][t] += y;
            counts[0][t] += 1;
        }
        if let Some(y) = data.y1[i] {
            sums[1][t] += y;
            counts[1][t] += 1;
        }
    }
    if counts.iter().flatten().any(|&c| c == 0) {
        return None;
    }
    let mean = |p: usize, t: usize| sums[p][t] / counts[p][t] as f64;
    let (pre_c, pre_t) = (mean(0, 0), mean(0, 1));
    let (post_c, post_t) = (mean(1, 0), mean(1, 1));
    let value = crate::dml::naive_did(pre_t, pre_c, post_t, post_c);
    Some(format!(
        "Naive DID: ({post_t:.4} - {post_c:.4}) - ({pre_t:.4} - {pre_c:.4}) = {value:.4}"
    ))
}

fn estimates_table(estimates: &[EffectEstimate]) -> String {
    let name_width =
        estimates.iter().map(|e| e.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<name_width$}  {:>10}  {:>14}  {:>10}  {:>10}\n",
        "Method", "Estimate", "Standard Error", "CI Lower", "CI Upper"
    );
    for e in estimates {
        let _ = writeln!(
            out,
            "{:<name_width$}  {:>10.4}  {:>14.4}  {:>10.4}  {:>10.4}",
            e.method, e.gamma, e.gamma_se, e.ci_lower, e.ci_upper
        );
    }
    out
}

fn estimates_record(estimates: &[EffectEstimate], meta: &[(String, String)]) -> String {
    let mut out = String::from("# stdml-estimates v1\n");
    out.push_str(&comment_block(meta));
    for e in estimates {
        let _ = writeln!(out, "method={}", e.method);
        let _ = writeln!(out, "gamma={}", e.gamma);
        let _ = writeln!(out, "se={}", e.gamma_se);
        let _ = writeln!(out, "ci_lower={}", e.ci_lower);
        let _ = writeln!(out, "ci_upper={}", e.ci_upper);
        let _ = writeln!(out, "n_rows={}", e.n_rows);
        for (name, value) in e.coefficient_names.iter().zip(e.theta.iter()) {
            let _ = writeln!(out, "coef.{name}={value}");
        }
        for (k, v) in &e.metadata {
            let _ = writeln!(out, "meta.{k}={v}");
        }
        out.push('\n');
    }
    out
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let seed: u64 = cfg.require_parse("seed")?;
    let data = ingest(Path::new(cfg.require("data")?))?;
    println!("{}", dataset_summary(&data));
    if let Some(line) = naive_did_line(&data) {
        println!("{line}");
    }

    let nb_scheme = NeighborScheme::parse(cfg.get_or("nb", "queen8"))?;
    let nb = Neighborhood::build(&data.grid, nb_scheme);
    let mut estimates = Vec::new();
    for (idx, token) in cfg.get_or("methods", "ols,did,dml").split(',').enumerate() {
        let est = match token.trim() {
            "ols" => baseline_ols(&data)?,
            "did" => baseline_did(&data, &nb)?,
            "dml" => run_stdml(&data, &parse_stdml_config(cfg, derive_seed(seed, &[idx as u64]), false)?)?,
            "dml-spatial" => {
                let mut c = parse_stdml_config(cfg, derive_seed(seed, &[idx as u64]), false)?;
                c.feature_set = FeatureSet::Xsz;
                let mut est = run_stdml(&data, &c)?;
                est.method = "DML-spatial".into();
                est
            }
            "dml-nonspatial" => {
                let mut c = parse_stdml_config(cfg, derive_seed(seed, &[idx as u64]), false)?;
                c.feature_set = FeatureSet::X;
                let mut est = run_stdml(&data, &c)?;
                est.method = "DML-nonspatial".into();
                est
            }
            other => return Err(Error::Usage(format!("unknown method token '{other}'"))),
        };
        estimates.push(est);
    }
    print!("{}", estimates_table(&estimates));

    if let Some(out) = cfg.get("out") {
        let meta = provenance("fit", cfg);
        write_file(Path::new(out), &estimates_record(&estimates, &meta))?;
    }
    Ok(())
}

/// Importance table: covariate columns plus an aggregated "spatial" column
/// (coordinates and basis features), one row per first-stage target.
pub fn cmd_importance(cfg: &RunConfig) -> Result<()> {
    let seed: u64 = cfg.require_parse("seed")?;
    let data = ingest(Path::new(cfg.require("data")?))?;
    let run_cfg = parse_stdml_config(cfg, seed, false)?;
    let folds = assign_folds(&data, run_cfg.k_folds, run_cfg.cf_mode, derive_seed(seed, &[10]))?;
    let mut learner_continuous = run_cfg.learner_continuous.clone();
    learner_continuous.seed = derive_seed(seed, &[11]);
    let mut learner_binary = run_cfg.learner_binary.clone();
    learner_binary.seed = derive_seed(seed, &[12]);
    let stage = FirstStageConfig {
        feature_set: run_cfg.feature_set,
        re_mode: run_cfg.re_mode,
        l_basis: run_cfg.l_basis,
        learner_continuous,
        learner_binary,
    };
    let preds = first_stage(&data, &folds, &stage)?;

    let p = data.n_covariates();
    let is_spatial: Vec<bool> = preds
        .feature_names
        .iter()
        .map(|n| n == "s_x" || n == "s_y" || n.starts_with('z'))
        .collect();
    let spatial_present = is_spatial.iter().any(|&b| b);

    let mut header: Vec<String> = data.covariate_names.clone();
    if spatial_present {
        header.push("spatial".into());
    }
    let mut table = String::new();
    let _ = write!(table, "{:<6}", "");
    for h in &header {
        let _ = write!(table, "  {h:>10}");
    }
    table.push('\n');
    let rows = [
        ("Y0", &preds.importance_y0),
        ("Y1", &preds.importance_y1),
        ("D", &preds.importance_d),
    ];
    for (label, imp) in &rows {
        let _ = write!(table, "{label:<6}");
        for j in 0..p {
            let _ = write!(table, "  {:>10.2}", imp[j]);
        }
        if spatial_present {
            let spatial: f64 = imp
                .iter()
                .zip(is_spatial.iter())
                .filter(|(_, &s)| s)
                .map(|(v, _)| v)
                .sum();
            let _ = write!(table, "  {spatial:>10.2}");
        }
        table.push('\n');
    }
    print!("{table}");

    if let Some(out) = cfg.get("out") {
        let meta = provenance("importance", cfg);
        let mut csv = String::from("# stdml-importance v1\n");
        csv.push_str(&comment_block(&meta));
        csv.push_str("target");
        for name in &preds.feature_names {
            let _ = write!(csv, ",{name}");
        }
        csv.push('\n');
        for (label, imp) in &rows {
            let _ = write!(csv, "{label}");
            for v in imp.iter() {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
        write_file(Path::new(out), &csv)?;
    }
    Ok(())
}

pub fn cmd_knot_sweep(cfg: &RunConfig) -> Result<()> {
    let seed: u64 = cfg.require_parse("seed")?;
    let data = ingest(Path::new(cfg.require("data")?))?;
    let l_values: Vec<usize> = cfg
        .require("l-values")?
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("bad basis size '{s}' in l-values")))
        })
        .collect::<Result<_>>()?;
    if l_values.is_empty() {
        return Err(Error::Usage("l-values must name at least one basis size".into()));
    }

    let mut labels = Vec::new();
    let mut estimates = Vec::new();
    let mut lowers = Vec::new();
    let mut uppers = Vec::new();
    let mut ses = Vec::new();
    for (idx, &l) in l_values.iter().enumerate() {
        let mut run_cfg = parse_stdml_config(cfg, derive_seed(seed, &[idx as u64]), false)?;
        if l == 0 {
            run_cfg.feature_set = FeatureSet::X;
        } else {
            run_cfg.feature_set = FeatureSet::Xsz;
            run_cfg.l_basis = l;
        }
        let est = run_stdml(&data, &run_cfg)?;
        println!(
            "L={l:<4} gamma {:+.4}  se {:.4}  ci [{:+.4}, {:+.4}]",
            est.gamma, est.gamma_se, est.ci_lower, est.ci_upper
        );
        labels.push(if l == 0 { "none".to_string() } else { format!("L={l}") });
        estimates.push(est.gamma);
        ses.push(est.gamma_se);
        lowers.push(est.ci_lower);
        uppers.push(est.ci_upper);
    }

    if let Some(prefix) = cfg.get("out") {
        let meta = provenance("knot-sweep", cfg);
        let mut csv = String::from("# stdml-knot-sweep v1\n");
        csv.push_str(&comment_block(&meta));
        csv.push_str("l,gamma,se,ci_lower,ci_upper\n");
        for (i, &l) in l_values.iter().enumerate() {
            let _ = writeln!(csv, "{l},{},{},{},{}", estimates[i], ses[i], lowers[i], uppers[i]);
        }
        write_file(&PathBuf::from(format!("{prefix}.csv")), &csv)?;
        let svg = interval_svg(
            "treatment effect by spatial basis size",
            &labels,
            &estimates,
            &lowers,
            &uppers,
        );
        write_file(&PathBuf::from(format!("{prefix}.svg")), &svg)?;
    }
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let seed: u64 = cfg.require_parse("seed")?;
    let reps: usize = cfg.parse_or("reps", 30)?;
    let design = cfg.get_or("design", "pixel");
    let nu: f64 = cfg.parse_or("nu", 2.0)?;
    let m: usize = cfg.parse_or("m", 32)?;
    let l: usize = cfg.parse_or("l", 100)?;

    let scenario = match design {
        "pixel" => {
            let mut sim = PixelSimConfig::new(nu, 0);
            sim.m = m;
            sim.rho = cfg.parse_or("rho", sim.rho)?;
            Scenario::Pixel(sim)
        }
        "block" => {
            let mut sim = BlockSimConfig::new(nu, 0);
            sim.m = m;
            sim.rho = cfg.parse_or("rho", sim.rho)?;
            Scenario::Block(sim)
        }
        other => return Err(Error::Usage(format!("unknown design '{other}'"))),
    };

    let preset = cfg.get_or("preset", if design == "block" { "table2" } else { "table1" });
    let mut methods: Vec<MethodSpec> = match preset {
        "table1" => table1_methods(l),
        "table2" => table2_methods(l),
        other => return Err(Error::Usage(format!("unknown preset '{other}'"))),
    };
    if let Some(filter) = cfg.get("methods") {
        let wanted: Vec<&str> = filter.split(',').map(str::trim).collect();
        methods.retain(|m| wanted.contains(&m.name.as_str()));
        if methods.len() != wanted.len() {
            let known: Vec<&str> = methods.iter().map(|m| m.name.as_str()).collect();
            return Err(Error::Usage(format!(
                "methods filter {wanted:?} does not match preset rows {known:?}"
            )));
        }
    }

    let mut sweep_cfg = SweepConfig::new(reps, seed);
    sweep_cfg.nb_scheme = NeighborScheme::parse(cfg.get_or("nb", "queen8"))?;
    let (cont, bin) = parse_learners(cfg, true)?;
    sweep_cfg.learner_continuous = cont;
    sweep_cfg.learner_binary = bin;
    sweep_cfg.parallel = !cfg.parse_or("serial", false)?;

    let result = run_sweep(&scenario, &methods, &sweep_cfg)?;
    print!("{}", render_table(&result));

    if let Some(prefix) = cfg.get("out") {
        let meta = provenance("sweep", cfg);
        let mut csv = String::from("# stdml-sweep v1\n");
        csv.push_str(&comment_block(&meta));
        csv.push_str(&render_csv(&result));
        write_file(&PathBuf::from(format!("{prefix}.csv")), &csv)?;
        let svg = boxplot_svg(
            &format!("estimates by method: {}", result.scenario_label),
            &result.method_names,
            &result.gamma_draws(),
            result.gamma_true,
        );
        write_file(&PathBuf::from(format!("{prefix}.svg")), &svg)?;
    }
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let path = PathBuf::from(cfg.require("input")?);
    let text = std::fs::read_to_string(&path)?;
    let first = text.lines().next().unwrap_or("");
    if first.starts_with("# stdml-sweep") || text.lines().any(|l| l.starts_with("method,bias")) {
        let summaries = parse_csv(&text)?;
        let name_width = summaries.iter().map(|s| s.method.len()).max().unwrap_or(6).max(6);
        println!(
            "{:<name_width$}  {:>8}  {:>8}  {:>9}  {:>8}  {:>6}",
            "Method", "Bias", "MSE", "CI length", "Coverage", "Reps"
        );
        for s in summaries {
            println!(
                "{:<name_width$}  {:>8.3}  {:>8.3}  {:>9.3}  {:>8.3}  {:>6}",
                s.method, s.bias, s.mse, s.ci_length, s.coverage, s.n_replicates
            );
        }
        return Ok(());
    }
    if first.starts_with("# stdml-estimates") {
        println!(
            "{:<20}  {:>10}  {:>14}  {:>10}  {:>10}",
            "Method", "Estimate", "Standard Error", "CI Lower", "CI Upper"
        );
        let mut current: Option<(String, f64, f64, f64, f64)> = None;
        for line in text.lines().chain(std::iter::once("")) {
            let line = line.trim();
            if line.is_empty() {
                if let Some((m, g, s, lo, hi)) = current.take() {
                    println!("{m:<20}  {g:>10.4}  {s:>14.4}  {lo:>10.4}  {hi:>10.4}");
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                let entry = current.get_or_insert(("?".into(), f64::NAN, f64::NAN, f64::NAN, f64::NAN));
                match k {
                    "method" => entry.0 = v.to_string(),
                    "gamma" => entry.1 = v.parse().unwrap_or(f64::NAN),
                    "se" => entry.2 = v.parse().unwrap_or(f64::NAN),
                    "ci_lower" => entry.3 = v.parse().unwrap_or(f64::NAN),
                    "ci_upper" => entry.4 = v.parse().unwrap_or(f64::NAN),
                    _ => {}
                }
            }
        }
        return Ok(());
    }
    Err(Error::Validation(vec![format!(
        "{}: not a recognized sweep CSV or estimates record",
        path.display()
    )]))
}
