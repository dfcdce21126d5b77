mod common;

use std::sync::Arc;

use common::{random_instance, random_unitary, small_config, with_gains};
use irskey::baseline::{per_mode_objective, reconstruct_precoder, waterfill};
use irskey::channel::{ChannelStatistics, SpatialCorrelation};
use irskey::config::{db_to_linear, SystemConfig};
use irskey::experiments::random_solution;
use irskey::linalg::{c, CMat, CVec};
use irskey::skr::{effective_variance, skr_approx, skr_closed_form, skr_monte_carlo};
use irskey::PkgSolution;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn permutation(order: &[usize]) -> CMat {
    let n = order.len();
    CMat::from_fn(n, n, |i, j| if order[i] == j { c(1.0, 0.0) } else { c(0.0, 0.0) })
}

fn relabeled(stats: &ChannelStatistics, perm: &CMat) -> ChannelStatistics {
    let sp = &stats.spatial;
    let spatial = SpatialCorrelation {
        r_b: perm * &sp.r_b * perm.transpose(),
        r_b_sqrt: perm * &sp.r_b_sqrt * perm.transpose(),
        ..(**sp).clone()
    };
    ChannelStatistics::from_parts(Arc::new(spatial), stats.gains)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nonnegative(seed in any::<u64>(), m in 1usize..5, side in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cfg, stats, sol) = random_instance(&mut rng, m, side);
        let r = skr_closed_form(&sol, &stats, cfg.p_b, cfg.noise_power).unwrap();
        prop_assert!(r.skr_bits >= 0.0 && r.skr_bits.is_finite());
    }

    #[test]
    fn invariant_under_antenna_relabeling(seed in any::<u64>(), shift in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cfg, stats, sol) = random_instance(&mut rng, 4, 2);
        let order: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
        let perm = permutation(&order);
        let before = skr_closed_form(&sol, &stats, cfg.p_b, cfg.noise_power).unwrap().skr_bits;
        // relabel BS antennas in the channel model and the precoder rows
        let moved = PkgSolution::new(&perm * &sol.precoder, sol.theta.clone());
        let after = skr_closed_form(&moved, &relabeled(&stats, &perm), cfg.p_b, cfg.noise_power).unwrap().skr_bits;
        prop_assert!((before - after).abs() <= 1e-10 * before.max(1.0));
        // relabel the observation streams
        let streams = PkgSolution::new(&sol.precoder * &perm, sol.theta.clone());
        let after = skr_closed_form(&streams, &stats, cfg.p_b, cfg.noise_power).unwrap().skr_bits;
        prop_assert!((before - after).abs() <= 1e-10 * before.max(1.0));
    }

    #[test]
    fn invariant_under_unitary_mixing_of_streams(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cfg, stats, sol) = random_instance(&mut rng, 3, 2);
        let before = skr_closed_form(&sol, &stats, cfg.p_b, cfg.noise_power).unwrap().skr_bits;
        let q = random_unitary(&mut rng, 3);
        let mixed = PkgSolution::new(&sol.precoder * q, sol.theta.clone());
        let after = skr_closed_form(&mixed, &stats, cfg.p_b, cfg.noise_power).unwrap().skr_bits;
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
    }

    #[test]
    fn nondecreasing_in_uplink_power(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cfg, stats, sol) = random_instance(&mut rng, 2, 2);
        let mut last = 0.0;
        for dbm in (-20..=30).step_by(5) {
            let v = skr_closed_form(&sol, &stats, db_to_linear(dbm as f64), cfg.noise_power).unwrap().skr_bits;
            prop_assert!(v >= last - 1e-12, "{} < {} at {} dBm", v, last, dbm);
            last = v;
        }
    }

    #[test]
    fn approximation_matches_mode_sum_for_diagonalized_precoders(seed in any::<u64>(), eta in 0.0f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SystemConfig { m: 3, l_h: 2, l_v: 2, eta, ..SystemConfig::default() };
        let stats = ChannelStatistics::new(&cfg).unwrap();
        let theta = random_solution(&cfg, &mut rng).theta;
        let dh2 = effective_variance(&theta, &stats);
        let mut wf = waterfill(&stats, dh2, cfg.p_a, cfg.p_b, cfg.noise_power, 1e-12).unwrap();
        // any feasible allocation, not only the optimum
        let w: Vec<f64> = (0..3).map(|_| rand::Rng::random_range(&mut rng, 0.1..1.0)).collect();
        let used: f64 = w.iter().zip(&wf.p_b_eigs).map(|(a, p)| a / p).sum();
        wf.q = w.iter().map(|a| a * 3.0 / used).collect();
        let p_e = reconstruct_precoder(&wf, &stats).unwrap();
        let approx = skr_approx(&p_e, &theta, &stats, cfg.p_a, cfg.p_b, cfg.noise_power).unwrap().skr_bits;
        let sum: f64 = wf.q.iter().map(|&q| per_mode_objective(q, dh2, cfg.p_a, cfg.p_b, cfg.noise_power)).sum();
        prop_assert!((approx - sum).abs() <= 1e-10 * sum.max(1.0), "{} vs {}", approx, sum);
    }
}

/// `I = −log2(1 − ρ²)` from the scalar variances and the covariance of the two observations.
fn scalar_mi_from_correlation(p_a: f64, p_b: f64, beta_h: f64, noise: f64) -> f64 {
    let var_a = p_a * (p_b * beta_h + noise);
    let var_b = p_a * beta_h + noise;
    let cov = p_b.sqrt() * p_a * beta_h;
    let rho2 = cov * cov / (var_a * var_b);
    -(-rho2).ln_1p() / std::f64::consts::LN_2
}

/// Same quantity with the `1 − ρ²` cancellation done symbolically.
fn scalar_mi_factored(p_a: f64, p_b: f64, beta_h: f64, noise: f64) -> f64 {
    let num = (noise + p_b * beta_h) * (noise + p_a * beta_h);
    let den = noise * (noise + p_b * beta_h + p_a * beta_h);
    (num / den).log2()
}

#[test]
fn single_antenna_direct_link_matches_scalar_formula() {
    let cfg = SystemConfig { m: 1, l_h: 1, l_v: 1, ..SystemConfig::default() };
    let beta_h = 3.7e-10;
    let stats = with_gains(&cfg, beta_h, 0.0, 1e-4);
    for pa_dbm in [-10.0, 0.0, 5.0, 10.0, 20.0] {
        for pb_dbm in [-10.0, 0.0, 5.0, 10.0, 20.0] {
            let (p_a, p_b) = (db_to_linear(pa_dbm), db_to_linear(pb_dbm));
            for phase in [0.0f64, 1.3] {
                let p = CMat::from_element(1, 1, c(phase.cos(), phase.sin()) * p_a.sqrt());
                let sol = PkgSolution::new(p, CVec::from_element(1, c(1.0, 0.0)));
                let got = skr_closed_form(&sol, &stats, p_b, cfg.noise_power).unwrap().skr_bits;
                let exact = scalar_mi_factored(p_a, p_b, beta_h, cfg.noise_power);
                assert!((got - exact).abs() <= 1e-12 * exact, "{got} vs {exact}");
                let via_rho = scalar_mi_from_correlation(p_a, p_b, beta_h, cfg.noise_power);
                assert!((got - via_rho).abs() <= 1e-9 * exact, "{got} vs {via_rho}");
            }
        }
    }
}

#[test]
fn no_uplink_power_gives_zero_rate() {
    let cfg = small_config();
    let stats = ChannelStatistics::new(&cfg).unwrap();
    let sol = random_solution(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
    let r = skr_closed_form(&sol, &stats, 0.0, cfg.noise_power).unwrap();
    assert!(r.skr_bits.abs() < 1e-12);
    let tiny = skr_closed_form(&sol, &stats, 1e-12, cfg.noise_power).unwrap();
    assert!(tiny.skr_bits < 1e-3);
}

#[test]
fn equal_phase_effective_variance_sums_hadamard_entries() {
    let cfg = SystemConfig::default();
    let stats = ChannelStatistics::new(&cfg).unwrap();
    let ones = CVec::from_element(cfg.l(), c(1.0, 0.0));
    let sum: f64 = stats.spatial.r_i_hadamard.iter().sum();
    let expect = stats.gains.h + stats.gains.g * stats.gains.f * sum;
    assert!((effective_variance(&ones, &stats) - expect).abs() < 1e-12 * expect);
}

#[test]
fn monte_carlo_agrees_on_a_few_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    for k in 0..4 {
        let (cfg, stats, sol) = random_instance(&mut rng, 2, 2);
        let cf = skr_closed_form(&sol, &stats, cfg.p_b, cfg.noise_power).unwrap().skr_bits;
        let mc = skr_monte_carlo(&sol, &stats, cfg.p_b, cfg.noise_power, 200_000, 1000 + k).unwrap();
        let se = mc.mc_std_error.unwrap();
        assert!((mc.skr_bits - cf).abs() < 4.0 * se, "instance {k}: {} vs {cf} (se {se})", mc.skr_bits);
        assert!(se < 0.05 * cf.max(0.1));
    }
}

#[test]
fn monte_carlo_is_reproducible() {
    let cfg = small_config();
    let stats = ChannelStatistics::new(&cfg).unwrap();
    let sol = random_solution(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
    let a = skr_monte_carlo(&sol, &stats, cfg.p_b, cfg.noise_power, 20_000, 9).unwrap();
    let b = skr_monte_carlo(&sol, &stats, cfg.p_b, cfg.noise_power, 20_000, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn monte_carlo_without_channel_is_near_zero() {
    let cfg = small_config();
    let stats = with_gains(&cfg, 0.0, 0.0, 0.0);
    let sol = random_solution(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
    let mc = skr_monte_carlo(&sol, &stats, cfg.p_b, cfg.noise_power, 100_000, 4).unwrap();
    assert!(mc.skr_bits.abs() < 3.0 * mc.mc_std_error.unwrap() + 1e-3, "{mc:?}");
}
