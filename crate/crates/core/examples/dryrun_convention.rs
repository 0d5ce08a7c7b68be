use stdml::dgp::PixelSimConfig;
use stdml::mc::{run_sweep, MethodSpec, Scenario, StdmlOptions, SweepConfig};
use stdml::dml::{CrossFitMode, FeatureSet, ReMode};

fn main() {
    // rho=0.6 under the sqrt(2 nu) scaling equals rho=0.3 under plain d/rho
    // scaling at nu=2.
    let mut sim = PixelSimConfig::new(2.0, 0);
    sim.rho = 0.6;
    let scenario = Scenario::Pixel(sim);
    let methods = vec![
        MethodSpec::did(),
        MethodSpec::stdml("DML-XS-CF", StdmlOptions {
            feature_set: FeatureSet::XS, cf_mode: CrossFitMode::ByPixel,
            k_folds: 10, re_mode: ReMode::None, l_basis: 100 }),
        MethodSpec::stdml("DML-XSZ-CF", StdmlOptions {
            feature_set: FeatureSet::Xsz, cf_mode: CrossFitMode::ByPixel,
            k_folds: 10, re_mode: ReMode::None, l_basis: 100 }),
        MethodSpec::stdml("DML-XSZ-noCF", StdmlOptions {
            feature_set: FeatureSet::Xsz, cf_mode: CrossFitMode::None,
            k_folds: 10, re_mode: ReMode::None, l_basis: 100 }),
    ];
    let cfg = SweepConfig::new(16, 5005);
    let result = run_sweep(&scenario, &methods, &cfg).unwrap();
    for s in &result.summaries {
        println!("{}: bias {:+.3} (se {:.3})  mse {:.3} (se {:.3})  cov {:.3}",
            s.method, s.bias, s.bias_se, s.mse, s.mse_se, s.coverage);
    }
}
