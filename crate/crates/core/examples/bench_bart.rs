use ndarray::Array2;
use std::time::Instant;
use stdml::treelearn::{fit_continuous, fit_binary, LearnerConfig};

fn main() {
    // Shape of an XSZ cross-fit fold: ~920 train rows, 105 features.
    let n = 922;
    let q = 105;
    let mut state = 88172645463325252u64;
    let mut next = || { state ^= state << 13; state ^= state >> 7; state ^= state << 17; (state >> 11) as f64 / (1u64 << 53) as f64 };
    let x = Array2::from_shape_fn((n, q), |_| next());
    let y: Vec<f64> = (0..n).map(|i| (x[(i,0)]*3.0).sin() + x[(i,1)] + 0.3*next()).collect();
    let d: Vec<u8> = (0..n).map(|i| u8::from(x[(i,2)] + 0.2*next() > 0.5)).collect();

    for (trees, burn, kept) in [(200usize, 100usize, 250usize), (100, 100, 250), (200, 100, 1000)] {
        let cfg = LearnerConfig { n_trees: trees, burn_in: burn, kept_draws: kept, seed: 1, ..LearnerConfig::continuous_default() };
        let t0 = Instant::now();
        let m = fit_continuous(&x, &y, &cfg).unwrap();
        let fit_time = t0.elapsed();
        let t1 = Instant::now();
        let _p = m.predict(&x).unwrap();
        println!("continuous trees={trees} kept={kept}: fit {:?}, predict(all) {:?}", fit_time, t1.elapsed());
    }
    let cfg = LearnerConfig { n_trees: 50, burn_in: 100, kept_draws: 250, seed: 2, ..LearnerConfig::binary_default() };
    let t0 = Instant::now();
    let m = fit_binary(&x, &d, &cfg).unwrap();
    println!("binary trees=50 kept=250: fit {:?}", t0.elapsed());
    let _ = m.predict(&x).unwrap();
}
