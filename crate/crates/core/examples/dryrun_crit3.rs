use std::time::Instant;
use stdml::dgp::PixelSimConfig;
use stdml::mc::{run_sweep, render_table, MethodSpec, Scenario, StdmlOptions, SweepConfig};
use stdml::dml::{CrossFitMode, FeatureSet, ReMode};

fn main() {
    let scenario = Scenario::Pixel(PixelSimConfig::new(2.0, 0));
    let methods = vec![
        MethodSpec::ols(),
        MethodSpec::did(),
        MethodSpec::stdml("DML-XS-CF", StdmlOptions {
            feature_set: FeatureSet::XS, cf_mode: CrossFitMode::ByPixel,
            k_folds: 10, re_mode: ReMode::None, l_basis: 100 }),
        MethodSpec::stdml("DML-XSZ-noCF", StdmlOptions {
            feature_set: FeatureSet::Xsz, cf_mode: CrossFitMode::None,
            k_folds: 10, re_mode: ReMode::None, l_basis: 100 }),
        MethodSpec::stdml("DML-XSZ-CF", StdmlOptions {
            feature_set: FeatureSet::Xsz, cf_mode: CrossFitMode::ByPixel,
            k_folds: 10, re_mode: ReMode::None, l_basis: 100 }),
    ];
    let cfg = SweepConfig::new(30, 7001);
    let t0 = Instant::now();
    let result = run_sweep(&scenario, &methods, &cfg).unwrap();
    println!("{}", render_table(&result));
    for s in &result.summaries {
        println!("{}: bias {:+.3} (se {:.3})  mse {:.3}  cov {:.3} (se {:.3})",
            s.method, s.bias, s.bias_se, s.mse, s.coverage, s.coverage_se);
    }
    println!("elapsed {:?}", t0.elapsed());
}
