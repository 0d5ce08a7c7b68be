use std::time::Instant;
use stdml::dgp::{simulate_pixel, PixelSimConfig};
use stdml::dml::{baseline_did, baseline_ols, run_stdml, CrossFitMode, FeatureSet, StdmlConfig};
use stdml::lattice::{Neighborhood, NeighborScheme};
use stdml::treelearn::LearnerConfig;

fn main() {
    let cfg = PixelSimConfig::new(2.0, 42);
    let (data, truth) = simulate_pixel(&cfg).unwrap();
    println!("treated fraction: {:.3}", data.treated_fraction());
    println!("missing fractions: {:.3} {:.3}", data.missing_fraction(0), data.missing_fraction(1));

    let nb = Neighborhood::build(&data.grid, NeighborScheme::Queen8);
    let t0 = Instant::now();
    let ols = baseline_ols(&data).unwrap();
    let did = baseline_did(&data, &nb).unwrap();
    println!("OLS  gamma {:+.3} se {:.3}  (truth {})", ols.gamma, ols.gamma_se, truth.gamma);
    println!("DID  gamma {:+.3} se {:.3}  [{:?}]", did.gamma, did.gamma_se, t0.elapsed());

    let quick_cont = LearnerConfig { n_trees: 150, burn_in: 75, kept_draws: 200, ..LearnerConfig::continuous_default() };
    let quick_bin = LearnerConfig { n_trees: 50, burn_in: 75, kept_draws: 200, ..LearnerConfig::binary_default() };

    for (set, cf) in [
        (FeatureSet::Xsz, CrossFitMode::ByPixel),
        (FeatureSet::XS, CrossFitMode::ByPixel),
        (FeatureSet::Xsz, CrossFitMode::None),
    ] {
        let mut c = StdmlConfig::new(42);
        c.feature_set = set;
        c.cf_mode = cf;
        c.learner_continuous = quick_cont.clone();
        c.learner_binary = quick_bin.clone();
        let t = Instant::now();
        let est = run_stdml(&data, &c).unwrap();
        println!(
            "{:<14} gamma {:+.3} se {:.3} ci [{:+.3},{:+.3}] covers={} [{:?}]",
            est.method, est.gamma, est.gamma_se, est.ci_lower, est.ci_upper,
            est.ci_contains(truth.gamma), t.elapsed()
        );
    }
}
