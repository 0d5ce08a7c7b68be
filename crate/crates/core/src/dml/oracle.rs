//! Oracle-first-stage construction: data generated as smooth spatial
//! components plus independent local noise, with the first-stage predictions
//! replaced by the true smooth components. Under this construction the
//! second stage is unbiased for the treatment effect, which makes it an
//! executable check of the residual-on-residual estimator itself,
//! independent of any learner.

use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::gausfield::{FieldSampler, MaternSpec};
use crate::lattice::{neighbor_mean_masked, Grid, Neighborhood, NeighborScheme};
use crate::rng::{derive_seed, rng_from_seed};

use super::regress::EffectEstimate;
use super::{second_stage, ResidualPanel};

#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Grid side; the lattice spans the unit square.
    pub m: usize,
    pub gamma: f64,
    /// Matern parameters of the smooth components.
    pub smooth_range: f64,
    pub smooth_nu: f64,
    /// Standard deviation of the spatially independent local components.
    pub local_sd: f64,
    /// Standard deviation of the observation noise.
    pub noise_sd: f64,
    pub nb_scheme: NeighborScheme,
    /// Whether the second stage keeps the neighbor-mean columns.
    pub include_neighbors: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            m: 20,
            gamma: 3.0,
            smooth_range: 0.5,
            smooth_nu: 2.5,
            local_sd: 0.7,
            noise_sd: 0.5,
            nb_scheme: NeighborScheme::Queen8,
            include_neighbors: false,
        }
    }
}

/// One oracle replicate: generate the decomposition, hand the smooth parts
/// to the second stage as if a perfect first stage had produced them.
pub fn oracle_estimate(cfg: &OracleConfig, seed: u64) -> Result<EffectEstimate> {
    let grid = Grid::unit_square(cfg.m)?;
    let n = grid.n_pixels();
    let spec = MaternSpec::new(cfg.smooth_range, cfg.smooth_nu)?;
    let sampler = FieldSampler::new(&grid, spec)?;
    let u0 = sampler.draw(derive_seed(seed, &[0])).values;
    let u1 = sampler.draw(derive_seed(seed, &[1])).values;
    let u2 = sampler.draw(derive_seed(seed, &[2])).values;

    let mut rng = rng_from_seed(derive_seed(seed, &[3]));
    let local = |sd: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect()
    };
    let e0 = local(cfg.local_sd, &mut rng);
    let e1 = local(cfg.local_sd, &mut rng);
    let e2 = local(cfg.local_sd, &mut rng);
    let eps0 = local(cfg.noise_sd, &mut rng);
    let eps1 = local(cfg.noise_sd, &mut rng);

    // Treatment and outcomes per the decomposition; treatment is the smooth
    // component plus local error (continuous, as in the unbiasedness
    // argument).
    let d: Vec<f64> = (0..n).map(|i| u2[i] + e2[i]).collect();
    let y0: Vec<f64> = (0..n).map(|i| u0[i] + e0[i] + eps0[i]).collect();
    let y1: Vec<f64> =
        (0..n).map(|i| u1[i] + e1[i] + cfg.gamma * d[i] + eps1[i]).collect();

    // Oracle first stage: the smooth components are fit exactly.
    let y0_hat = &u0;
    let y1_hat: Vec<f64> = (0..n).map(|i| u1[i] + cfg.gamma * u2[i]).collect();
    let d_hat = &u2;

    let rd: Vec<f64> = (0..n).map(|i| d[i] - d_hat[i]).collect();
    let nb = Neighborhood::build(&grid, cfg.nb_scheme);
    let observed = vec![true; n];
    let means = neighbor_mean_masked(&rd, &observed, &nb)?;
    let panel = ResidualPanel {
        r0: (0..n).map(|i| Some(y0[i] - y0_hat[i])).collect(),
        r1: (0..n).map(|i| Some(y1[i] - y1_hat[i])).collect(),
        rd,
        rd_bar: means.values,
        unneighbored: means.unneighbored,
    };
    let mut est = second_stage(&panel, cfg.include_neighbors)?;
    est.method = "oracle".into();
    est.push_meta("oracle_seed", seed);
    Ok(est)
}
