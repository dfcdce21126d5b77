//! PKG-Net: an unsupervised MLP mapping the UE location to a precoder and an
//! IRS phase vector.
//!
//! ```text
//! x (3) ─ FC 200 ─ ReLU ─ FC 200 ─ ReLU ─┬─ FC 2M² ─ precoder normalization ─ P
//!                                        └─ FC 2L  ─ phase normalization    ─ θ
//! ```
//!
//! Both outputs are feasible by construction: `Tr(PPᴴ) = P_a·M` and
//! `|θ_l| = 1`. Training minimizes the negative mean closed-form key rate
//! over a batch of UE locations with Adam; gradients are computed by hand,
//! through the log-determinants, the normalizations and the ReLU layers.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelStatistics, PathGains, SpatialCorrelation};
use crate::config::{Point3, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CVec};
use crate::probing::PkgSolution;
use crate::skr::{hadamard_quadratic, mutual_information_bits, mutual_information_terms, skr_closed_form};

pub const HIDDEN: usize = 200;
pub const INPUT: usize = 3;
/// Guard on the norm of a normalization layer's input.
pub const NORM_EPS: f64 = 1e-12;
/// Training aborts after this many consecutive non-finite steps.
pub const MAX_NONFINITE_STEPS: usize = 5;

/// Weights and biases; biases are stored as single-column matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub m: usize,
    pub l: usize,
    pub w1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub wp: DMatrix<f64>,
    pub bp: DMatrix<f64>,
    pub wt: DMatrix<f64>,
    pub bt: DMatrix<f64>,
}

impl NetParams {
    pub fn zeros(m: usize, l: usize) -> Self {
        let z = |r, c| DMatrix::zeros(r, c);
        NetParams {
            m,
            l,
            w1: z(HIDDEN, INPUT),
            b1: z(HIDDEN, 1),
            w2: z(HIDDEN, HIDDEN),
            b2: z(HIDDEN, 1),
            wp: z(2 * m * m, HIDDEN),
            bp: z(2 * m * m, 1),
            wt: z(2 * l, HIDDEN),
            bt: z(2 * l, 1),
        }
    }

    /// Uniform `±√(6/(fan_in + fan_out))` weights, zero biases.
    pub fn init<R: Rng + ?Sized>(m: usize, l: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(m, l);
        for w in [&mut p.w1, &mut p.w2, &mut p.wp, &mut p.wt] {
            let limit = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn tensors(&self) -> [&DMatrix<f64>; 8] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.wp, &self.bp, &self.wt, &self.bt]
    }

    pub fn tensors_mut(&mut self) -> [&mut DMatrix<f64>; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wp,
            &mut self.bp,
            &mut self.wt,
            &mut self.bt,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Reads parameter `index` in the flat order of [`NetParams::tensors`].
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t.as_slice()[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t.as_mut_slice()[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Training region for the UE in the `xy`-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeRegion {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: f64,
}

impl Default for UeRegion {
    fn default() -> Self {
        UeRegion {
            x: [5.0, 15.0],
            y: [5.0, 15.0],
            z: 0.0,
        }
    }
}

impl UeRegion {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3 {
        let x = self.x[0] + (self.x[1] - self.x[0]) * rng.random::<f64>();
        let y = self.y[0] + (self.y[1] - self.y[0]) * rng.random::<f64>();
        [x, y, self.z]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ue_region: UeRegion,
    /// Reuse one reshuffled location set instead of drawing fresh ones per epoch.
    pub fixed_locations: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            samples_per_epoch: 1000,
            batch_size: 100,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ue_region: UeRegion::default(),
            fixed_locations: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 || self.samples_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, samples_per_epoch and batch_size must be positive".into());
        }
        if !self.samples_per_epoch.is_multiple_of(self.batch_size) {
            return bad(format!(
                "batch size {} does not divide {} samples per epoch",
                self.batch_size, self.samples_per_epoch
            ));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam parameters out of range".into());
        }
        let r = &self.ue_region;
        if !(r.x[0] <= r.x[1] && r.y[0] <= r.y[1]) {
            return bad("UE region bounds are reversed".into());
        }
        Ok(())
    }
}

/// Per-location channel statistics for one system geometry.
///
/// Correlations are shared; only the path gains depend on the UE location.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub system: SystemConfig,
    pub spatial: Arc<SpatialCorrelation>,
}

impl LinkModel {
    pub fn new(system: &SystemConfig) -> Result<Self> {
        system.validate()?;
        Ok(LinkModel {
            system: system.clone(),
            spatial: Arc::new(SpatialCorrelation::new(system)?),
        })
    }

    pub fn gains(&self, ue: &Point3) -> Result<PathGains> {
        PathGains::for_location(&self.system, ue)
    }

    pub fn stats(&self, ue: &Point3) -> Result<ChannelStatistics> {
        Ok(ChannelStatistics::from_parts(self.spatial.clone(), self.gains(ue)?))
    }
}

/// Precoder normalization: the first `M²` entries are real parts and the last
/// `M²` imaginary parts, both column-major; the result is scaled so that
/// `Tr(PPᴴ) = P_a·M`.
pub fn normalize_precoder(p_prime: &[f64], m: usize, p_a: f64) -> Result<CMat> {
    let mm = m * m;
    if p_prime.len() != 2 * mm {
        return Err(Error::DimensionMismatch {
            context: "precoder head output",
            expected: 2 * mm,
            actual: p_prime.len(),
        });
    }
    let norm = p_prime.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > NORM_EPS) {
        return Err(Error::DegenerateActivation("precoder head output has (near-)zero norm"));
    }
    let k = (m as f64 * p_a).sqrt() / norm;
    Ok(CMat::from_fn(m, m, |i, j| {
        let idx = j * m + i;
        c(k * p_prime[idx], k * p_prime[idx + mm])
    }))
}

/// Phase normalization: `θ_l = (θ′_l + jθ′_{l+L}) / |·|`; pairs with magnitude
/// below [`NORM_EPS`] map to phase zero.
pub fn normalize_phases(theta_prime: &[f64]) -> CVec {
    let l = theta_prime.len() / 2;
    CVec::from_fn(l, |i, _| {
        let (a, b) = (theta_prime[i], theta_prime[i + l]);
        let r = a.hypot(b);
        if r > NORM_EPS {
            c(a / r, b / r)
        } else {
            c(1.0, 0.0)
        }
    })
}

/// Pulls a gradient w.r.t. `P` (packed as `∂/∂Re + j∂/∂Im`) back to the head output.
pub fn precoder_backward(p_prime: &[f64], m: usize, p_a: f64, grad_p: &CMat) -> Vec<f64> {
    let mm = m * m;
    let norm = p_prime.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > NORM_EPS) {
        return vec![0.0; 2 * mm];
    }
    let mut g = vec![0.0; 2 * mm];
    for j in 0..m {
        for i in 0..m {
            g[j * m + i] = grad_p[(i, j)].re;
            g[j * m + i + mm] = grad_p[(i, j)].im;
        }
    }
    let dot: f64 = g.iter().zip(p_prime).map(|(a, b)| a * b).sum::<f64>() / norm;
    let k = (m as f64 * p_a).sqrt() / norm;
    g.iter().zip(p_prime).map(|(gi, zi)| k * (gi - dot * zi / norm)).collect()
}

/// Pulls a gradient w.r.t. `θ` back to the phase head output.
pub fn phases_backward(theta_prime: &[f64], grad_theta: &CVec) -> Vec<f64> {
    let l = theta_prime.len() / 2;
    let mut out = vec![0.0; 2 * l];
    for i in 0..l {
        let (a, b) = (theta_prime[i], theta_prime[i + l]);
        let r = a.hypot(b);
        if !(r > NORM_EPS) {
            continue;
        }
        let (ua, ub) = (a / r, b / r);
        let (ga, gb) = (grad_theta[i].re, grad_theta[i].im);
        let radial = ga * ua + gb * ub;
        out[i] = (ga - radial * ua) / r;
        out[i + l] = (gb - radial * ub) / r;
    }
    out
}

/// Key rate of one sample and its gradients w.r.t. `P` and `θ`.
#[derive(Debug, Clone)]
pub struct SampleObjective {
    pub bits: f64,
    pub grad_p: CMat,
    pub grad_theta: CVec,
}

/// Uses `R_Z = δ_h²(θ)·PᵀR_BP*`, the form the block structure of `R_c` gives.
fn precoded_parts(p: &CMat, theta: &CVec, spatial: &SpatialCorrelation, gains: &PathGains) -> (CMat, CMat, CMat, f64) {
    let x = p.conjugate();
    let q = x.adjoint() * &spatial.r_b * &x;
    let gram = x.adjoint() * &x;
    let s = gains.h + gains.reflected() * hadamard_quadratic(theta, &spatial.r_i_hadamard);
    (x, q, gram, s)
}

pub fn sample_value(p: &CMat, theta: &CVec, spatial: &SpatialCorrelation, gains: &PathGains, p_b: f64, noise: f64) -> Result<f64> {
    let (_, q, gram, s) = precoded_parts(p, theta, spatial, gains);
    mutual_information_bits(&(q * c(s, 0.0)), &gram, p_b, noise)
}

pub fn sample_objective(
    p: &CMat,
    theta: &CVec,
    spatial: &SpatialCorrelation,
    gains: &PathGains,
    p_b: f64,
    noise: f64,
) -> Result<SampleObjective> {
    let (x, q, gram, s) = precoded_parts(p, theta, spatial, gains);
    let terms = mutual_information_terms(&(&q * c(s, 0.0)), &gram, p_b, noise)?;
    // R_Z = s·XᴴR_BX, gram = XᴴX with X = P*
    let grad_x = (&spatial.r_b * &x * &terms.w_z * c(2.0 * s, 0.0)) + (&x * &terms.w_n * c(2.0, 0.0));
    let ds = (&terms.w_z * &q).trace().re;
    let a_theta = spatial.r_i_hadamard.map(|v| c(v, 0.0)) * theta;
    let grad_theta = a_theta * c(2.0 * ds * gains.reflected(), 0.0);
    Ok(SampleObjective {
        bits: terms.bits,
        grad_p: grad_x.conjugate(),
        grad_theta,
    })
}

/// Cached activations of a batch forward pass.
struct ForwardCache {
    input: DMatrix<f64>,
    z1: DMatrix<f64>,
    h1: DMatrix<f64>,
    z2: DMatrix<f64>,
    h2: DMatrix<f64>,
    head_p: DMatrix<f64>,
    head_t: DMatrix<f64>,
}

fn affine(w: &DMatrix<f64>, b: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = w * x;
    for mut col in z.column_iter_mut() {
        col += b.column(0);
    }
    z
}

fn relu(z: &DMatrix<f64>) -> DMatrix<f64> {
    z.map(|v| v.max(0.0))
}

fn forward_batch(params: &NetParams, locations: &[Point3]) -> ForwardCache {
    let input = DMatrix::from_fn(INPUT, locations.len(), |i, k| locations[k][i]);
    let z1 = affine(&params.w1, &params.b1, &input);
    let h1 = relu(&z1);
    let z2 = affine(&params.w2, &params.b2, &h1);
    let h2 = relu(&z2);
    let head_p = affine(&params.wp, &params.bp, &h2);
    let head_t = affine(&params.wt, &params.bt, &h2);
    ForwardCache {
        input,
        z1,
        h1,
        z2,
        h2,
        head_p,
        head_t,
    }
}

fn decode(params: &NetParams, cache: &ForwardCache, k: usize, p_a: f64) -> Result<PkgSolution> {
    let p = normalize_precoder(cache.head_p.column(k).as_slice(), params.m, p_a)?;
    let theta = normalize_phases(cache.head_t.column(k).as_slice());
    Ok(PkgSolution::new(p, theta))
}

/// Network output for one UE location.
pub fn forward(params: &NetParams, ue: &Point3, system: &SystemConfig) -> Result<PkgSolution> {
    let cache = forward_batch(params, std::slice::from_ref(ue));
    decode(params, &cache, 0, system.p_a)
}

/// Inference entry point; same as [`forward`].
pub fn infer(params: &NetParams, ue: &Point3, system: &SystemConfig) -> Result<PkgSolution> {
    forward(params, ue, system)
}

fn check_model(params: &NetParams, link: &LinkModel) -> Result<()> {
    if params.m != link.spatial.m() || params.l != link.spatial.l() {
        return Err(Error::DimensionMismatch {
            context: "network (M, L) vs. system",
            expected: link.spatial.m() * 1000 + link.spatial.l(),
            actual: params.m * 1000 + params.l,
        });
    }
    Ok(())
}

/// `−(1/K) Σ_k SKR_k` in bits.
pub fn loss(params: &NetParams, batch: &[Point3], link: &LinkModel) -> Result<f64> {
    check_model(params, link)?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let cache = forward_batch(params, batch);
    let sys = &link.system;
    let values: Vec<Result<f64>> = (0..batch.len())
        .into_par_iter()
        .map(|k| {
            let sol = decode(params, &cache, k, sys.p_a)?;
            let gains = link.gains(&batch[k])?;
            sample_value(&sol.precoder, &sol.theta, &link.spatial, &gains, sys.p_b, sys.noise_power)
        })
        .collect();
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(-total / batch.len() as f64)
}

/// Loss and its exact gradient w.r.t. every parameter.
pub fn gradient(params: &NetParams, batch: &[Point3], link: &LinkModel) -> Result<(f64, NetParams)> {
    check_model(params, link)?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let k_count = batch.len();
    let scale = -1.0 / k_count as f64;
    let sys = &link.system;
    let cache = forward_batch(params, batch);

    let per_sample: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> = (0..k_count)
        .into_par_iter()
        .map(|k| {
            let sol = decode(params, &cache, k, sys.p_a)?;
            let gains = link.gains(&batch[k])?;
            let obj = sample_objective(&sol.precoder, &sol.theta, &link.spatial, &gains, sys.p_b, sys.noise_power)?;
            let dp = precoder_backward(cache.head_p.column(k).as_slice(), params.m, sys.p_a, &obj.grad_p);
            let dt = phases_backward(cache.head_t.column(k).as_slice(), &obj.grad_theta);
            Ok((obj.bits, dp, dt))
        })
        .collect();

    let mut d_head_p = DMatrix::zeros(cache.head_p.nrows(), k_count);
    let mut d_head_t = DMatrix::zeros(cache.head_t.nrows(), k_count);
    let mut total = 0.0;
    for (k, r) in per_sample.into_iter().enumerate() {
        let (bits, dp, dt) = r?;
        total += bits;
        for (i, v) in dp.into_iter().enumerate() {
            d_head_p[(i, k)] = scale * v;
        }
        for (i, v) in dt.into_iter().enumerate() {
            d_head_t[(i, k)] = scale * v;
        }
    }

    let row_sums = |d: &DMatrix<f64>| DMatrix::from_fn(d.nrows(), 1, |i, _| d.row(i).sum());
    let mut g = NetParams::zeros(params.m, params.l);
    g.wp = &d_head_p * cache.h2.transpose();
    g.bp = row_sums(&d_head_p);
    g.wt = &d_head_t * cache.h2.transpose();
    g.bt = row_sums(&d_head_t);
    let d_h2 = params.wp.transpose() * &d_head_p + params.wt.transpose() * &d_head_t;
    let d_z2 = d_h2.zip_map(&cache.z2, |d, z| if z > 0.0 { d } else { 0.0 });
    g.w2 = &d_z2 * cache.h1.transpose();
    g.b2 = row_sums(&d_z2);
    let d_h1 = params.w2.transpose() * &d_z2;
    let d_z1 = d_h1.zip_map(&cache.z1, |d, z| if z > 0.0 { d } else { 0.0 });
    g.w1 = &d_z1 * cache.input.transpose();
    g.b1 = row_sums(&d_z1);
    Ok((-total / k_count as f64, g))
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: NetParams,
    v: NetParams,
}

impl Adam {
    pub fn new(template: &NetParams, cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: NetParams::zeros(template.m, template.l),
            v: NetParams::zeros(template.m, template.l),
        }
    }

    pub fn step(&mut self, params: &mut NetParams, grad: &NetParams) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let targets = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in targets.into_iter().zip(grad.tensors()).zip(ms).zip(vs) {
            for i in 0..p.len() {
                let gi = g.as_slice()[i];
                let mi = &mut m.as_mut_slice()[i];
                let vi = &mut v.as_mut_slice()[i];
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                p.as_mut_slice()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss_bits: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub history: Vec<EpochRecord>,
}

const INIT_STREAM: u64 = 0;
const LOCATION_STREAM: u64 = 1;

/// Trains a fresh network; fully determined by `cfg.seed`.
pub fn train(cfg: &TrainConfig, system: &SystemConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let link = LinkModel::new(system)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(INIT_STREAM);
    let params = NetParams::init(system.m, system.l(), &mut init_rng);
    train_from(params, cfg, &link)
}

/// Continues training from the given parameters.
pub fn train_from(mut params: NetParams, cfg: &TrainConfig, link: &LinkModel) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_model(&params, link)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(LOCATION_STREAM);
    let mut adam = Adam::new(&params, cfg);
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut fixed: Vec<Point3> = if cfg.fixed_locations {
        (0..cfg.samples_per_epoch).map(|_| cfg.ue_region.sample(&mut rng)).collect()
    } else {
        Vec::new()
    };
    let mut nonfinite = 0;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let locations: Vec<Point3> = if cfg.fixed_locations {
            shuffle(&mut fixed, &mut rng);
            fixed.clone()
        } else {
            (0..cfg.samples_per_epoch).map(|_| cfg.ue_region.sample(&mut rng)).collect()
        };
        let mut sum = 0.0;
        let mut counted = 0usize;
        for batch in locations.chunks(cfg.batch_size) {
            step += 1;
            let attempt = gradient(&params, batch, link);
            match attempt {
                Ok((value, grad)) if value.is_finite() && grad.is_finite() => {
                    nonfinite = 0;
                    adam.step(&mut params, &grad);
                    sum += value;
                    counted += 1;
                }
                Ok(_) | Err(Error::DegenerateActivation(_)) | Err(Error::NotPositiveDefinite(_)) => {
                    nonfinite += 1;
                    if nonfinite >= MAX_NONFINITE_STEPS {
                        return Err(Error::Diverged {
                            step,
                            consecutive: nonfinite,
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let mean = if counted > 0 { sum / counted as f64 } else { f64::NAN };
        log::debug!("epoch {epoch}: mean loss {mean:.6} bits");
        history.push(EpochRecord {
            epoch,
            mean_loss_bits: mean,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { params, history })
}

fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Closed-form key rate of the network's configuration at `ue`.
pub fn evaluate(params: &NetParams, link: &LinkModel, ue: &Point3) -> Result<f64> {
    let sol = infer(params, ue, &link.system)?;
    let stats = link.stats(ue)?;
    Ok(skr_closed_form(&sol, &stats, link.system.p_b, link.system.noise_power)?.skr_bits)
}

/// Writes `epoch,mean_loss_bits,wall_seconds`; with `timing = false` the last
/// column is zero so the file depends only on the seed.
pub fn write_history_csv(history: &[EpochRecord], path: &Path, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, csv_io(e)))?;
    let io = |e: csv::Error| Error::io(path, csv_io(e));
    w.write_record(["epoch", "mean_loss_bits", "wall_seconds"]).map_err(io)?;
    for r in history {
        let wall = if timing { r.wall_seconds } else { 0.0 };
        w.write_record([r.epoch.to_string(), r.mean_loss_bits.to_string(), wall.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

pub const CHECKPOINT_FORMAT: &str = "irskey-pkgnet";
pub const CHECKPOINT_PACKING: &str = "precoder head: M^2 real parts then M^2 imaginary parts, column-major; phase head: L real parts then L imaginary parts";

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    rows: usize,
    cols: usize,
    /// Column-major values.
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    m: usize,
    l: usize,
    hidden: usize,
    packing: String,
    seed: u64,
    tensors: Vec<(String, TensorRecord)>,
}

const TENSOR_NAMES: [&str; 8] = ["w1", "b1", "w2", "b2", "wp", "bp", "wt", "bt"];

pub fn save_checkpoint(params: &NetParams, seed: u64, path: &Path) -> Result<()> {
    let tensors = TENSOR_NAMES
        .iter()
        .zip(params.tensors())
        .map(|(name, t)| {
            (
                name.to_string(),
                TensorRecord {
                    rows: t.nrows(),
                    cols: t.ncols(),
                    data: t.as_slice().to_vec(),
                },
            )
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        m: params.m,
        l: params.l,
        hidden: HIDDEN,
        packing: CHECKPOINT_PACKING.into(),
        seed,
        tensors,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads parameters and the seed recorded in the header.
pub fn load_checkpoint(path: &Path) -> Result<(NetParams, u64)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT || file.version != 1 || file.hidden != HIDDEN {
        return Err(Error::Checkpoint(format!(
            "unsupported header {} v{} hidden={}",
            file.format, file.version, file.hidden
        )));
    }
    if file.packing != CHECKPOINT_PACKING {
        return Err(Error::Checkpoint("unknown packing convention".into()));
    }
    let mut params = NetParams::zeros(file.m, file.l);
    if file.tensors.len() != TENSOR_NAMES.len() {
        return Err(Error::Checkpoint("wrong number of tensors".into()));
    }
    for ((name, rec), (expected, slot)) in file.tensors.into_iter().zip(TENSOR_NAMES.iter().zip(params.tensors_mut())) {
        if name != *expected || rec.rows != slot.nrows() || rec.cols != slot.ncols() || rec.data.len() != slot.len() {
            return Err(Error::Checkpoint(format!("tensor {name} has the wrong shape")));
        }
        slot.as_mut_slice().copy_from_slice(&rec.data);
    }
    Ok((params, file.seed))
}
