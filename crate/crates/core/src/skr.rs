//! Secret key rate of the probing protocol.
//!
//! With `R_Z = (θ̃⊗P)ᵀ R_c (θ̃⊗P)*` the observation covariances are
//!
//! ```text
//! R_a  = P_b R_Z + δ² PᵀP*      (Alice)
//! R_b  = R_Z + δ² I             (Bob)
//! R_ab = √P_b R_Z               (cross)
//! ```
//!
//! and the rate is the Gaussian mutual information
//! `log₂(|R_a||R_b| / |joint|)`. The joint determinant is evaluated through
//! its Schur complement `|R_b|·|S|` with
//! `S = δ²(P_b R_Z R_b⁻¹ + PᵀP*)`, which is algebraically exact and avoids the
//! cancellation in `R_a − R_ab R_b⁻¹ R_ab` at high SNR.

use std::f64::consts::LN_2;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{cn, ChannelStatistics, PathGains, SpatialCorrelation};
use crate::error::{Error, Result};
use crate::linalg::{
    c, checked_hermitian, eigenvalues_hermitian, hermitize, identity, inverse_hpd, kron, logdet_hpd, logdet_update,
    CMat, CVec, HERMITIAN_TOL,
};
use crate::probing::{dft_pilot, PkgSolution};

/// Largest accepted condition number of `PᵀP*` on its range.
pub const MAX_PRECODER_CONDITION: f64 = 1e12;
/// Precoder singular values below this fraction of the largest are exact
/// nulls, i.e. roundoff.
pub const NULL_SINGULAR_RATIO: f64 = 1e-12;
/// Below this the closed form is reported as a genuine negative (and clipped).
pub const NEGATIVE_TOL: f64 = 1e-9;
pub const MIN_MC_SAMPLES: usize = 10_000;
pub const DEFAULT_MC_BATCHES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkrMethod {
    ClosedForm,
    Approximate,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkrReport {
    /// Bits per probing round.
    pub skr_bits: f64,
    pub method: SkrMethod,
    pub mc_std_error: Option<f64>,
}

impl SkrReport {
    fn exact(skr_bits: f64, method: SkrMethod) -> Self {
        SkrReport {
            skr_bits,
            method,
            mc_std_error: None,
        }
    }
}

/// Block-diagonal cascaded-channel covariance
/// `diag(β_h R_B, β_G β_f (R_I ⊙ R_I) ⊗ R_B)`.
pub fn assemble_rc(spatial: &SpatialCorrelation, gains: &PathGains) -> CMat {
    let m = spatial.m();
    let l = spatial.l();
    let n = m * (l + 1);
    let mut rc = CMat::zeros(n, n);
    rc.view_mut((0, 0), (m, m)).copy_from(&(&spatial.r_b * c(gains.h, 0.0)));
    let had = spatial.r_i_hadamard.map(|v| c(v * gains.reflected(), 0.0));
    rc.view_mut((m, m), (m * l, m * l)).copy_from(&kron(&had, &spatial.r_b));
    rc
}

pub fn build_rc(stats: &ChannelStatistics) -> CMat {
    assemble_rc(&stats.spatial, &stats.gains)
}

fn check_solution_dims(sol: &PkgSolution, stats: &ChannelStatistics) -> Result<()> {
    if sol.precoder.nrows() != stats.m() || sol.precoder.ncols() != stats.m() {
        return Err(Error::DimensionMismatch {
            context: "precoder size",
            expected: stats.m(),
            actual: sol.precoder.nrows(),
        });
    }
    if sol.l() != stats.l() {
        return Err(Error::DimensionMismatch {
            context: "IRS phase vector",
            expected: stats.l(),
            actual: sol.l(),
        });
    }
    Ok(())
}

/// `R_Z = (θ̃⊗P)ᵀ R_c (θ̃⊗P)*`.
pub fn build_rz(sol: &PkgSolution, stats: &ChannelStatistics) -> Result<CMat> {
    check_solution_dims(sol, stats)?;
    let theta_tilde = CMat::from_column_slice(sol.l() + 1, 1, sol.theta_tilde().as_slice());
    let k = kron(&theta_tilde, &sol.precoder);
    Ok(hermitize(&(k.transpose() * &stats.r_c * k.conjugate())))
}

/// `δ_h² = β_h + β_G β_f θᴴ(R_I ⊙ R_I)θ`.
pub fn effective_variance(theta: &CVec, stats: &ChannelStatistics) -> f64 {
    stats.gains.h + stats.gains.reflected() * hadamard_quadratic(theta, &stats.spatial.r_i_hadamard)
}

/// `θᴴ A θ` for real symmetric `A`.
pub fn hadamard_quadratic(theta: &CVec, a: &DMatrix<f64>) -> f64 {
    let l = theta.len();
    let mut acc = 0.0;
    for i in 0..l {
        for j in 0..l {
            acc += a[(i, j)] * (theta[i].conj() * theta[j]).re;
        }
    }
    acc
}

/// Mutual information and the Hermitian weights of its differential.
///
/// With `f` in bits, `df = tr(w_z · dR_Z) + tr(w_n · d(PᵀP*))`.
#[derive(Debug, Clone)]
pub struct MiTerms {
    pub bits: f64,
    pub w_z: CMat,
    pub w_n: CMat,
}

struct MiFactors {
    ra_inv: CMat,
    rb_inv: CMat,
    s_inv: CMat,
    nats: f64,
}

fn mi_factors(r_z: &CMat, gram: &CMat, p_b: f64, noise: f64, want_inverses: bool) -> Result<MiFactors> {
    let m = r_z.nrows();
    let r_a = hermitize(&(r_z * c(p_b, 0.0) + gram * c(noise, 0.0)));
    let r_b = hermitize(&(r_z + identity(m) * c(noise, 0.0)));
    let rb_inv = inverse_hpd(&r_b)?;
    let k = hermitize(&(r_z * &rb_inv));
    let s = hermitize(&((k * c(p_b, 0.0) + gram) * c(noise, 0.0)));
    // R_a = S + P_b·R_Z R_b⁻¹ R_Z
    let update = hermitize(&(r_z * &rb_inv * r_z * c(p_b, 0.0)));
    let nats = logdet_update(&s, &update)?;
    let (ra_inv, s_inv) = if want_inverses {
        (inverse_hpd(&r_a)?, inverse_hpd(&s)?)
    } else {
        (CMat::zeros(0, 0), CMat::zeros(0, 0))
    };
    Ok(MiFactors {
        ra_inv,
        rb_inv,
        s_inv,
        nats,
    })
}

/// Gaussian MI in bits from `R_Z` and `PᵀP*`; no clipping.
pub fn mutual_information_bits(r_z: &CMat, gram: &CMat, p_b: f64, noise: f64) -> Result<f64> {
    Ok(mi_factors(r_z, gram, p_b, noise, false)?.nats / LN_2)
}

/// [`mutual_information_bits`] together with its gradient weights.
pub fn mutual_information_terms(r_z: &CMat, gram: &CMat, p_b: f64, noise: f64) -> Result<MiTerms> {
    let f = mi_factors(r_z, gram, p_b, noise, true)?;
    // f = ln|R_a| − ln|S|,  dS = δ²(P_b δ² R_b⁻¹ dR_Z R_b⁻¹ + d gram)
    let noise2 = noise * noise;
    let w_z = (&f.ra_inv * c(p_b, 0.0) - &f.rb_inv * &f.s_inv * &f.rb_inv * c(p_b * noise2, 0.0))
        * c(1.0 / LN_2, 0.0);
    let w_n = (&f.ra_inv - &f.s_inv) * c(noise / LN_2, 0.0);
    Ok(MiTerms {
        bits: f.nats / LN_2,
        w_z: hermitize(&w_z),
        w_n: hermitize(&w_n),
    })
}

fn clip_nonnegative(bits: f64) -> f64 {
    if bits < -NEGATIVE_TOL {
        log::warn!("secret key rate evaluated to {bits:.3e} bits; clipping to zero");
    }
    bits.max(0.0)
}

/// Closed-form secret key rate of a configuration.
pub fn skr_closed_form(sol: &PkgSolution, stats: &ChannelStatistics, p_b: f64, noise: f64) -> Result<SkrReport> {
    check_solution_dims(sol, stats)?;
    if !(noise > 0.0) {
        return Err(Error::InvalidConfig(format!("noise power {noise} must be positive")));
    }
    if !(p_b >= 0.0) {
        return Err(Error::InvalidConfig(format!("uplink power {p_b} must be nonnegative")));
    }
    let gram = hermitize(&(sol.precoder.transpose() * sol.precoder.conjugate()));
    let svd = sol.precoder.transpose().svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if !(sv[0] > 0.0) {
        return Err(Error::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    let r_z = build_rz(sol, stats)?;
    let rz_ev = eigenvalues_hermitian(&r_z)?;
    let rz_min = *rz_ev.last().unwrap();
    if rz_min < -HERMITIAN_TOL * rz_ev[0].abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Indefinite {
            min_eigenvalue: rz_min,
        });
    }
    // A structurally singular precoder (e.g. unpowered eigenmodes) leaves
    // Alice's observation confined to the range of Pᵀ; Bob's components
    // outside it are pure noise, so the problem is evaluated on that range.
    let rank = sv.iter().take_while(|&&v| v > NULL_SINGULAR_RATIO * sv[0]).count();
    let condition = (sv[0] / sv[rank - 1]).powi(2);
    if condition >= MAX_PRECODER_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let (r_z, gram) = if rank < sv.len() {
        log::debug!("precoder has rank {rank} of {}; evaluating on its range", sv.len());
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let basis = CMat::from_fn(u.nrows(), rank, |i, k| u[(i, order[k])]);
        let reduced_gram = CMat::from_fn(rank, rank, |i, j| if i == j { c(sv[i] * sv[i], 0.0) } else { c(0.0, 0.0) });
        (hermitize(&(basis.adjoint() * &r_z * &basis)), reduced_gram)
    } else {
        (r_z, gram)
    };
    let bits = mutual_information_bits(&r_z, &gram, p_b, noise)?;
    Ok(SkrReport::exact(clip_nonnegative(bits), SkrMethod::ClosedForm))
}

/// Approximate rate with `P_eᵀP_e*` replaced by `I` in the noise term;
/// `P = √P_a·P_e` and `Tr(P_e P_eᴴ) = M`.
pub fn skr_approx(
    p_e: &CMat,
    theta: &CVec,
    stats: &ChannelStatistics,
    p_a: f64,
    p_b: f64,
    noise: f64,
) -> Result<SkrReport> {
    let m = stats.m();
    if p_e.nrows() != m || p_e.ncols() != m {
        return Err(Error::DimensionMismatch {
            context: "normalized precoder",
            expected: m,
            actual: p_e.nrows(),
        });
    }
    if theta.len() != stats.l() {
        return Err(Error::DimensionMismatch {
            context: "IRS phase vector",
            expected: stats.l(),
            actual: theta.len(),
        });
    }
    let power = crate::linalg::frobenius_sq(p_e);
    if (power - m as f64).abs() > 1e-6 * m as f64 {
        return Err(Error::Normalization(format!(
            "Tr(P_e P_e^H) = {power} but must equal M = {m}"
        )));
    }
    let dh2 = effective_variance(theta, stats);
    let r_hat = checked_hermitian(&(p_e.transpose() * &stats.spatial.r_b * p_e.conjugate()), HERMITIAN_TOL)?;
    let i = identity(m);
    let num1 = &r_hat * c(p_b * p_a * dh2, 0.0) + &i * c(noise * p_a, 0.0);
    let num2 = &r_hat * c(p_a * dh2, 0.0) + &i * c(noise, 0.0);
    let den = (&r_hat * c((p_b + p_a) * dh2, 0.0) + &i * c(noise, 0.0)) * c(noise * p_a, 0.0);
    let nats = logdet_hpd(&num1)? + logdet_hpd(&num2)? - logdet_hpd(&den)?;
    Ok(SkrReport::exact(clip_nonnegative(nats / LN_2), SkrMethod::Approximate))
}

/// Draws the probing observations `[ỹ_a; ỹ_bᵀ]` for one configuration.
///
/// Uses `h + GΘf = R_B^{1/2}(h̃ + G̃·Ψ f̃)` with `Ψ = R_I^{1/2} Θ R_I^{1/2}`,
/// which is the same draw as [`crate::channel::sample_realization`] regrouped.
struct ProbeSampler {
    m: usize,
    l: usize,
    psi: CMat,
    t: CMat,
    pt: CMat,
    sdt: CMat,
    sqrt_pb: f64,
    gains: PathGains,
    noise: f64,
}

impl ProbeSampler {
    fn new(sol: &PkgSolution, stats: &ChannelStatistics, p_b: f64, noise: f64) -> Self {
        let sp = &stats.spatial;
        let theta = CMat::from_diagonal(&sol.theta);
        let pt = sol.precoder.transpose();
        ProbeSampler {
            m: stats.m(),
            l: stats.l(),
            psi: &sp.r_i_sqrt * theta * &sp.r_i_sqrt,
            t: &pt * &sp.r_b_sqrt,
            pt,
            sdt: dft_pilot(stats.m()).transpose(),
            sqrt_pb: p_b.sqrt(),
            gains: stats.gains,
            noise,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, buf: &mut SampleBuffers, z: &mut [num_complex::Complex64]) {
        let (m, l) = (self.m, self.l);
        for v in buf.h.iter_mut() {
            *v = cn(rng, self.gains.h);
        }
        for v in buf.g.iter_mut() {
            *v = cn(rng, self.gains.g);
        }
        for v in buf.f.iter_mut() {
            *v = cn(rng, self.gains.f);
        }
        for v in buf.na.iter_mut() {
            *v = cn(rng, self.noise);
        }
        for v in buf.nb.iter_mut() {
            *v = cn(rng, self.noise);
        }
        for i in 0..l {
            let mut acc = c(0.0, 0.0);
            for j in 0..l {
                acc += self.psi[(i, j)] * buf.f[j];
            }
            buf.w[i] = acc;
        }
        for i in 0..m {
            let mut acc = buf.h[i];
            for j in 0..l {
                // g is column-major M × L
                acc += buf.g[j * m + i] * buf.w[j];
            }
            buf.v[i] = acc;
        }
        for i in 0..m {
            let mut sig = c(0.0, 0.0);
            let mut na = c(0.0, 0.0);
            let mut nb = c(0.0, 0.0);
            for j in 0..m {
                sig += self.t[(i, j)] * buf.v[j];
                na += self.pt[(i, j)] * buf.na[j];
                nb += self.sdt[(i, j)] * buf.nb[j];
            }
            z[i] = sig * self.sqrt_pb + na;
            z[m + i] = sig + nb;
        }
    }
}

struct SampleBuffers {
    h: Vec<num_complex::Complex64>,
    g: Vec<num_complex::Complex64>,
    f: Vec<num_complex::Complex64>,
    w: Vec<num_complex::Complex64>,
    v: Vec<num_complex::Complex64>,
    na: Vec<num_complex::Complex64>,
    nb: Vec<num_complex::Complex64>,
}

impl SampleBuffers {
    fn new(m: usize, l: usize) -> Self {
        let z = || c(0.0, 0.0);
        SampleBuffers {
            h: vec![z(); m],
            g: vec![z(); m * l],
            f: vec![z(); l],
            w: vec![z(); l],
            v: vec![z(); m],
            na: vec![z(); m],
            nb: vec![z(); m],
        }
    }
}

/// Gaussian MI in bits of a `2M × 2M` joint covariance `[[R_a, ·],[·, R_b]]`.
fn gaussian_mi_from_joint(joint: &CMat, m: usize) -> Result<f64> {
    let ra = joint.view((0, 0), (m, m)).into_owned();
    let rb = joint.view((m, m), (m, m)).into_owned();
    let ld = |a: &CMat| logdet_hpd(a).map_err(|_| Error::SingularCovariance);
    Ok((ld(&ra)? + ld(&rb)? - ld(joint)?) / LN_2)
}

/// Monte Carlo estimate of the key rate from sample covariances of simulated
/// probing observations, with a batch-means standard error.
///
/// Batch `b` uses ChaCha stream `b` of `seed`, so the result does not depend
/// on the number of worker threads.
pub fn skr_monte_carlo(
    sol: &PkgSolution,
    stats: &ChannelStatistics,
    p_b: f64,
    noise: f64,
    n_samples: usize,
    seed: u64,
) -> Result<SkrReport> {
    skr_monte_carlo_batched(sol, stats, p_b, noise, n_samples, DEFAULT_MC_BATCHES, seed)
}

pub fn skr_monte_carlo_batched(
    sol: &PkgSolution,
    stats: &ChannelStatistics,
    p_b: f64,
    noise: f64,
    n_samples: usize,
    n_batches: usize,
    seed: u64,
) -> Result<SkrReport> {
    check_solution_dims(sol, stats)?;
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    if n_batches < 10 {
        return Err(Error::InvalidConfig(format!("need at least 10 batches, got {n_batches}")));
    }
    let m = stats.m();
    let dim = 2 * m;
    let sampler = ProbeSampler::new(sol, stats, p_b, noise);
    let per_batch = n_samples / n_batches;

    let batch_sums: Vec<CMat> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut buf = SampleBuffers::new(m, stats.l());
            let mut z = vec![c(0.0, 0.0); dim];
            let mut acc = CMat::zeros(dim, dim);
            for _ in 0..per_batch {
                sampler.draw(&mut rng, &mut buf, &mut z);
                for j in 0..dim {
                    let zj = z[j].conj();
                    for i in 0..dim {
                        acc[(i, j)] += z[i] * zj;
                    }
                }
            }
            acc
        })
        .collect();

    let mut pooled = CMat::zeros(dim, dim);
    let mut batch_mi = Vec::with_capacity(n_batches);
    for s in &batch_sums {
        pooled += s;
        batch_mi.push(gaussian_mi_from_joint(&(s / c(per_batch as f64, 0.0)), m)?);
    }
    let total = (per_batch * n_batches) as f64;
    let estimate = gaussian_mi_from_joint(&(pooled / c(total, 0.0)), m)?;
    let nb = n_batches as f64;
    let mean = batch_mi.iter().sum::<f64>() / nb;
    let var = batch_mi.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nb - 1.0);
    Ok(SkrReport {
        skr_bits: estimate,
        method: SkrMethod::MonteCarlo,
        mc_std_error: Some((var / nb).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::linalg::max_abs;
    use std::sync::Arc;

    fn small_stats(eta: f64) -> ChannelStatistics {
        let cfg = SystemConfig { m: 2, l_h: 2, l_v: 2, eta, ..SystemConfig::default() };
        ChannelStatistics::new(&cfg).unwrap()
    }

    fn scaled_identity(m: usize, p_a: f64) -> CMat {
        identity(m) * c(p_a.sqrt(), 0.0)
    }

    #[test]
    fn rc_trivial_case() {
        let cfg = SystemConfig { m: 1, l_h: 1, l_v: 1, eta: 0.0, ..SystemConfig::default() };
        let spatial = Arc::new(SpatialCorrelation::new(&cfg).unwrap());
        let stats = ChannelStatistics::from_parts(spatial, PathGains { h: 1.0, g: 1.0, f: 1.0 });
        assert!(max_abs(&(build_rc(&stats) - identity(2))) < 1e-15);
    }

    #[test]
    fn rc_is_psd_and_block_diagonal() {
        let cfg = SystemConfig { m: 2, l_h: 2, l_v: 2, eta: 0.3, ..SystemConfig::default() };
        let stats = ChannelStatistics::new(&cfg).unwrap();
        let rc = build_rc(&stats);
        let ev = eigenvalues_hermitian(&rc).unwrap();
        assert!(*ev.last().unwrap() >= -1e-12 * ev[0]);
        assert!(rc.view((0, 2), (2, 8)).iter().all(|z| z.norm() == 0.0));
        assert!(rc.view((2, 0), (8, 2)).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rz_zero_precoder_is_zero() {
        let stats = small_stats(0.3);
        let sol = PkgSolution::new(CMat::zeros(2, 2), CVec::from_element(4, c(1.0, 0.0)));
        assert_eq!(build_rz(&sol, &stats).unwrap(), CMat::zeros(2, 2));
    }

    #[test]
    fn rz_without_irs_path() {
        let stats = small_stats(0.3);
        let stats = ChannelStatistics::from_parts(
            stats.spatial.clone(),
            PathGains { h: 2e-9, g: 0.0, f: 4e-6 },
        );
        let p = CMat::from_row_slice(2, 2, &[c(1.0, 0.5), c(0.2, -1.0), c(0.0, 0.3), c(1.1, 0.0)]);
        let p = &p * c((2.0 * 10.0 / crate::linalg::frobenius_sq(&p)).sqrt(), 0.0);
        let sol = PkgSolution::new(p.clone(), CVec::from_element(4, c(0.0, 1.0)));
        let rz = build_rz(&sol, &stats).unwrap();
        let expect = p.transpose() * &stats.spatial.r_b * p.conjugate() * c(2e-9, 0.0);
        assert!(max_abs(&(rz - expect)) < 1e-22);
    }

    #[test]
    fn rz_is_effective_variance_times_precoded_rb() {
        let stats = small_stats(0.4);
        let theta = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0), c(-0.6, 0.8), c(0.8, 0.6)]);
        let p = CMat::from_row_slice(2, 2, &[c(1.0, 0.5), c(0.2, -1.0), c(0.0, 0.3), c(1.1, 0.0)]);
        let sol = PkgSolution::new(p.clone(), theta.clone());
        let rz = build_rz(&sol, &stats).unwrap();
        let expect = p.transpose() * &stats.spatial.r_b * p.conjugate() * c(effective_variance(&theta, &stats), 0.0);
        assert!(max_abs(&(&rz - &expect)) < 1e-12 * max_abs(&expect));
    }

    #[test]
    fn effective_variance_cases() {
        let stats = small_stats(0.3);
        let gains = stats.gains;
        let ones = CVec::from_element(4, c(1.0, 0.0));
        let sum: f64 = stats.spatial.r_i_hadamard.iter().sum();
        let got = effective_variance(&ones, &stats);
        assert!((got - (gains.h + gains.reflected() * sum)).abs() < 1e-24);

        let no_irs = ChannelStatistics::from_parts(stats.spatial.clone(), PathGains { g: 0.0, ..gains });
        assert_eq!(effective_variance(&ones, &no_irs), gains.h);

        let cfg = SystemConfig { m: 2, l_h: 1, l_v: 1, ..SystemConfig::default() };
        let one = ChannelStatistics::new(&cfg).unwrap();
        let v = effective_variance(&CVec::from_element(1, c(0.0, 1.0)), &one);
        assert!((v - (one.gains.h + one.gains.reflected())).abs() < 1e-24);
    }

    #[test]
    fn closed_form_vanishes_without_uplink_power() {
        let stats = small_stats(0.3);
        let sol = PkgSolution::new(scaled_identity(2, 10.0), CVec::from_element(4, c(1.0, 0.0)));
        let r = skr_closed_form(&sol, &stats, 0.0, 1e-12).unwrap();
        assert!(r.skr_bits.abs() < 1e-9);
        let r = skr_closed_form(&sol, &stats, 1e-9, 1e-12).unwrap();
        assert!(r.skr_bits < 1e-3);
    }

    #[test]
    fn rank_deficient_precoder_reduces_to_its_range() {
        let stats = small_stats(0.3);
        let theta = CVec::from_element(4, c(1.0, 0.0));
        let with_second = |eps: f64| CMat::from_fn(2, 2, |i, j| if j == 0 { c(1.0 + i as f64, 0.5) } else { c(eps, -eps * i as f64) });
        let single = PkgSolution::new(with_second(0.0), theta.clone());
        let got = skr_closed_form(&single, &stats, 10.0, 1e-9).unwrap().skr_bits;
        // one-stream problem: scalar R_Z and gram from the first column only
        let p1 = with_second(0.0).column(0).into_owned();
        let rz = build_rz(&single, &stats).unwrap()[(0, 0)];
        let gram = CMat::from_element(1, 1, (p1.transpose() * p1.conjugate())[(0, 0)]);
        let expect = mutual_information_bits(&CMat::from_element(1, 1, rz), &gram, 10.0, 1e-9).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect, "{got} vs {expect}");
        // a tiny but genuine second stream is ill-conditioned, not null
        let tiny = PkgSolution::new(with_second(1e-8), theta);
        assert!(matches!(skr_closed_form(&tiny, &stats, 10.0, 1e-9), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn closed_form_rejects_bad_inputs() {
        let stats = small_stats(0.3);
        let sol = PkgSolution::new(CMat::zeros(2, 2), CVec::from_element(4, c(1.0, 0.0)));
        assert!(matches!(skr_closed_form(&sol, &stats, 10.0, 1e-12), Err(Error::IllConditioned { .. })));
        let sol = PkgSolution::new(scaled_identity(2, 10.0), CVec::from_element(4, c(1.0, 0.0)));
        assert!(skr_closed_form(&sol, &stats, 10.0, 0.0).is_err());
        let wrong = PkgSolution::new(scaled_identity(3, 10.0), CVec::from_element(4, c(1.0, 0.0)));
        assert!(matches!(skr_closed_form(&wrong, &stats, 10.0, 1e-12), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn closed_form_matches_determinant_ratio() {
        // the literal ratio |P_bR_Z + δ²PᵀP*||R_Z + δ²I| / |P_bδ²R_Z + δ²PᵀP*(R_Z + δ²I)|
        let stats = small_stats(0.5);
        let p = CMat::from_row_slice(2, 2, &[c(1.0, 0.5), c(0.2, -1.0), c(0.0, 0.3), c(1.1, 0.0)]);
        let theta = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0), c(-0.6, 0.8), c(0.8, 0.6)]);
        let sol = PkgSolution::new(p.clone(), theta);
        let (p_b, d2) = (3.0, 1e-11);
        let rz = build_rz(&sol, &stats).unwrap();
        let gram = p.transpose() * p.conjugate();
        let i = identity(2);
        let n1 = (&rz * c(p_b, 0.0) + &gram * c(d2, 0.0)).determinant();
        let n2 = (&rz + &i * c(d2, 0.0)).determinant();
        let dd = (&rz * c(p_b * d2, 0.0) + &gram * (&rz + &i * c(d2, 0.0)) * c(d2, 0.0)).determinant();
        let literal = (n1 * n2 / dd).re.log2();
        let got = skr_closed_form(&sol, &stats, p_b, d2).unwrap().skr_bits;
        assert!((got - literal).abs() < 1e-9 * literal.abs(), "{got} vs {literal}");
    }

    #[test]
    fn gradient_weights_match_finite_differences_in_rz() {
        let rz = CMat::from_row_slice(2, 2, &[c(2e-9, 0.0), c(3e-10, 1e-10), c(3e-10, -1e-10), c(1e-9, 0.0)]);
        let gram = CMat::from_row_slice(2, 2, &[c(5.0, 0.0), c(1.0, 0.5), c(1.0, -0.5), c(4.0, 0.0)]);
        let (p_b, d2) = (10.0, 1e-12);
        let t = mutual_information_terms(&rz, &gram, p_b, d2).unwrap();
        let dir = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.3, -0.2), c(0.3, 0.2), c(-0.5, 0.0)]);
        let h = 1e-14;
        let fp = mutual_information_bits(&(&rz + &dir * c(h, 0.0)), &gram, p_b, d2).unwrap();
        let fm = mutual_information_bits(&(&rz - &dir * c(h, 0.0)), &gram, p_b, d2).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let an = (&t.w_z * &dir).trace().re;
        assert!((fd - an).abs() < 1e-5 * an.abs(), "{fd} vs {an}");

        let h = 1e-5;
        let fp = mutual_information_bits(&rz, &(&gram + &dir * c(h, 0.0)), p_b, d2).unwrap();
        let fm = mutual_information_bits(&rz, &(&gram - &dir * c(h, 0.0)), p_b, d2).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let an = (&t.w_n * &dir).trace().re;
        assert!((fd - an).abs() < 1e-5 * an.abs().max(1e-9), "{fd} vs {an}");
    }

    #[test]
    fn approx_is_exact_for_identity_precoder_without_correlation() {
        let stats = small_stats(0.0);
        let (p_a, p_b, d2) = (10.0, 10.0, 1e-12);
        let theta = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0), c(-0.6, 0.8), c(0.8, 0.6)]);
        let approx = skr_approx(&identity(2), &theta, &stats, p_a, p_b, d2).unwrap();
        let sol = PkgSolution::new(scaled_identity(2, p_a), theta);
        let exact = skr_closed_form(&sol, &stats, p_b, d2).unwrap();
        assert!((approx.skr_bits - exact.skr_bits).abs() < 1e-10 * exact.skr_bits);
        assert!(skr_approx(&(identity(2) * c(2.0, 0.0)), &sol.theta, &stats, p_a, p_b, d2).is_err());
    }

    #[test]
    fn monte_carlo_rejects_small_sample_counts() {
        let stats = small_stats(0.3);
        let sol = PkgSolution::new(scaled_identity(2, 10.0), CVec::from_element(4, c(1.0, 0.0)));
        assert!(skr_monte_carlo(&sol, &stats, 10.0, 1e-12, 100, 0).is_err());
    }
}
