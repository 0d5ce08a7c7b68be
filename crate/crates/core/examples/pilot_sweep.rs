use std::time::Instant;
use stdml::dgp::{simulate_pixel, PixelSimConfig};
use stdml::dml::{baseline_did, baseline_ols, run_stdml, CrossFitMode, FeatureSet, StdmlConfig};
use stdml::lattice::{Neighborhood, NeighborScheme};
use stdml::rng::derive_seed;
use stdml::treelearn::LearnerConfig;

fn main() {
    let reps = 10;
    let mut results: Vec<(String, Vec<(f64, f64, bool, f64)>)> = vec![
        ("OLS".into(), vec![]), ("DID".into(), vec![]),
        ("XSZ-CF".into(), vec![]), ("XS-CF".into(), vec![]), ("XSZ-noCF".into(), vec![]),
    ];
    let t0 = Instant::now();
    for rep in 0..reps {
        let seed = derive_seed(2024, &[rep]);
        let (data, truth) = simulate_pixel(&PixelSimConfig::new(2.0, seed)).unwrap();
        let nb = Neighborhood::build(&data.grid, NeighborScheme::Queen8);
        let quick_cont = LearnerConfig { n_trees: 150, burn_in: 75, kept_draws: 200, ..LearnerConfig::continuous_default() };
        let quick_bin = LearnerConfig { n_trees: 50, burn_in: 75, kept_draws: 200, ..LearnerConfig::binary_default() };
        let mut run = |set: FeatureSet, cf: CrossFitMode| {
            let mut c = StdmlConfig::new(seed);
            c.feature_set = set; c.cf_mode = cf;
            c.learner_continuous = quick_cont.clone(); c.learner_binary = quick_bin.clone();
            run_stdml(&data, &c).unwrap()
        };
        let ests = [
            baseline_ols(&data).unwrap(),
            baseline_did(&data, &nb).unwrap(),
            run(FeatureSet::Xsz, CrossFitMode::ByPixel),
            run(FeatureSet::XS, CrossFitMode::ByPixel),
            run(FeatureSet::Xsz, CrossFitMode::None),
        ];
        for (slot, est) in results.iter_mut().zip(ests.iter()) {
            slot.1.push((est.gamma, est.gamma - truth.gamma, est.ci_contains(truth.gamma), est.ci_length()));
        }
        eprintln!("rep {rep} done {:?}", t0.elapsed());
    }
    println!("{:<10} {:>7} {:>7} {:>9} {:>9}", "method", "bias", "mse", "ci_len", "coverage");
    for (name, rows) in &results {
        let r = rows.len() as f64;
        let bias = rows.iter().map(|x| x.1).sum::<f64>() / r;
        let mse = rows.iter().map(|x| x.1 * x.1).sum::<f64>() / r;
        let cil = rows.iter().map(|x| x.3).sum::<f64>() / r;
        let cov = rows.iter().filter(|x| x.2).count() as f64 / r;
        println!("{name:<10} {bias:>+7.3} {mse:>7.3} {cil:>9.3} {cov:>9.3}");
    }
}
