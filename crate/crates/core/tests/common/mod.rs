#![allow(dead_code)]

use std::sync::Arc;

use irskey::channel::{ChannelStatistics, PathGains, SpatialCorrelation};
use irskey::config::SystemConfig;
use irskey::experiments::random_solution;
use irskey::linalg::{c, CMat};
use irskey::PkgSolution;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn small_config() -> SystemConfig {
    SystemConfig { m: 2, l_h: 2, l_v: 2, ..SystemConfig::default() }
}

/// Statistics with the given correlations but chosen path gains.
pub fn with_gains(config: &SystemConfig, h: f64, g: f64, f: f64) -> ChannelStatistics {
    let spatial = Arc::new(SpatialCorrelation::new(config).unwrap());
    ChannelStatistics::from_parts(spatial, PathGains { h, g, f })
}

/// Random geometry/power/correlation and a random feasible configuration.
pub fn random_instance<R: Rng>(rng: &mut R, m: usize, side: usize) -> (SystemConfig, ChannelStatistics, PkgSolution) {
    let cfg = SystemConfig {
        m,
        l_h: side,
        l_v: side,
        eta: rng.random_range(0.0..0.9),
        pos_ue: [rng.random_range(5.0..15.0), rng.random_range(5.0..15.0), 0.0],
        ..SystemConfig::default()
    }
    .with_power_dbm(rng.random_range(-10.0..20.0));
    let stats = ChannelStatistics::new(&cfg).unwrap();
    let sol = random_solution(&cfg, rng);
    (cfg, stats, sol)
}

pub fn complex_gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im)
    })
}

/// Unitary factor of the QR decomposition of a Gaussian matrix.
pub fn random_unitary<R: Rng>(rng: &mut R, m: usize) -> CMat {
    complex_gaussian(rng, m, m).qr().q()
}

pub fn rel_frobenius(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm()
}

/// Sample covariance `(1/N) Σ x xᴴ` of zero-mean vectors.
pub fn sample_covariance<I: IntoIterator<Item = irskey::linalg::CVec>>(samples: I, dim: usize) -> CMat {
    let mut acc = CMat::zeros(dim, dim);
    let mut n = 0usize;
    for x in samples {
        acc += &x * x.adjoint();
        n += 1;
    }
    acc / c(n as f64, 0.0)
}
