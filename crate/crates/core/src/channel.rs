//! Spatially correlated Rayleigh channels for the BS–IRS–UE geometry.
//!
//! The BS is a uniform linear array with exponential correlation, the IRS a
//! uniform planar array with the isotropic-scattering sinc correlation. Each
//! channel is `R^{1/2} · (i.i.d. CN(0, β))` on the appropriate side(s).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{distance, Point3, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{c, matrix_sqrt, to_complex, CMat, CVec};
use crate::skr;

/// IRS correlation `[R_I]_{n,m} = sinc(2π‖u_n − u_m‖/λ)` for an `l_h × l_v`
/// planar array, element `n` at `(0, y_n Δ, z_n Δ)` with
/// `y_n = n mod l_h`, `z_n = ⌊n / l_h⌋` (0-based).
pub fn irs_correlation(l_h: usize, l_v: usize, delta_over_lambda: f64) -> DMatrix<f64> {
    let l = l_h * l_v;
    let pos = |n: usize| ((n % l_h) as f64, (n / l_h) as f64);
    DMatrix::from_fn(l, l, |n, m| {
        let (yn, zn) = pos(n);
        let (ym, zm) = pos(m);
        let dist = ((yn - ym).powi(2) + (zn - zm).powi(2)).sqrt() * delta_over_lambda;
        let x = 2.0 * PI * dist;
        if x == 0.0 {
            1.0
        } else {
            x.sin() / x
        }
    })
}

/// BS correlation `[R_B]_{m,n} = η^{|m−n|}`.
pub fn bs_correlation(eta: f64, m: usize) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("eta = {eta} must lie in [0, 1)")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| eta.powi(i.abs_diff(j) as i32)))
}

/// Large-scale gain `10^{(β₀ − 10 α log₁₀(d/d₀))/10}`.
pub fn path_loss_linear(d: f64, alpha: f64, beta_0_db: f64, d_0: f64) -> Result<f64> {
    if !(d_0 > 0.0) || !(d >= d_0) {
        return Err(Error::InvalidConfig(format!(
            "link distance {d} m is below the reference distance {d_0} m"
        )));
    }
    let db = beta_0_db - 10.0 * alpha * (d / d_0).log10();
    Ok(10f64.powf(db / 10.0))
}

/// Correlation matrices and their square roots; independent of UE position.
#[derive(Debug, Clone)]
pub struct SpatialCorrelation {
    pub r_b: CMat,
    pub r_i: CMat,
    pub r_b_sqrt: CMat,
    pub r_i_sqrt: CMat,
    /// `R_I ⊙ R_I`, real and entrywise nonnegative.
    pub r_i_hadamard: DMatrix<f64>,
}

impl SpatialCorrelation {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        let r_b_real = bs_correlation(config.eta, config.m)?;
        let r_i_real = irs_correlation(config.l_h, config.l_v, config.delta_over_lambda);
        let r_i_hadamard = r_i_real.component_mul(&r_i_real);
        let r_b = to_complex(&r_b_real);
        let r_i = to_complex(&r_i_real);
        Ok(SpatialCorrelation {
            r_b_sqrt: matrix_sqrt(&r_b)?,
            r_i_sqrt: matrix_sqrt(&r_i)?,
            r_b,
            r_i,
            r_i_hadamard,
        })
    }

    pub fn m(&self) -> usize {
        self.r_b.nrows()
    }

    pub fn l(&self) -> usize {
        self.r_i.nrows()
    }
}

/// Linear path gains of the BS–UE (`h`), BS–IRS (`g`) and IRS–UE (`f`) links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGains {
    pub h: f64,
    pub g: f64,
    pub f: f64,
}

impl PathGains {
    pub fn for_location(config: &SystemConfig, ue: &Point3) -> Result<Self> {
        let pl = |a: &Point3, b: &Point3, alpha: f64| {
            path_loss_linear(distance(a, b), alpha, config.beta_0_db, config.d_0)
        };
        Ok(PathGains {
            h: pl(&config.pos_bs, ue, config.alpha_h)?,
            g: pl(&config.pos_bs, &config.pos_irs, config.alpha_g)?,
            f: pl(&config.pos_irs, ue, config.alpha_f)?,
        })
    }

    pub fn for_config(config: &SystemConfig) -> Result<Self> {
        Self::for_location(config, &config.pos_ue)
    }

    /// Product `β_G β_f` of the reflected path.
    pub fn reflected(&self) -> f64 {
        self.g * self.f
    }
}

/// Second-order statistics of the channel at one UE location.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    pub spatial: Arc<SpatialCorrelation>,
    pub gains: PathGains,
    /// Covariance of the cascaded channel, `M(L+1) × M(L+1)`.
    pub r_c: CMat,
}

impl ChannelStatistics {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        config.validate()?;
        let spatial = Arc::new(SpatialCorrelation::new(config)?);
        Ok(Self::from_parts(spatial, PathGains::for_config(config)?))
    }

    pub fn from_parts(spatial: Arc<SpatialCorrelation>, gains: PathGains) -> Self {
        let r_c = skr::assemble_rc(&spatial, &gains);
        ChannelStatistics { spatial, gains, r_c }
    }

    pub fn m(&self) -> usize {
        self.spatial.m()
    }

    pub fn l(&self) -> usize {
        self.spatial.l()
    }
}

/// One draw of the direct, BS–IRS and IRS–UE channels.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: CVec,
    pub g: CMat,
    pub f: CVec,
    /// `vec([h, G·diag(f)])`.
    pub h_c: CVec,
}

impl ChannelRealization {
    pub fn new(h: CVec, g: CMat, f: CVec) -> Result<Self> {
        let m = h.len();
        if g.nrows() != m {
            return Err(Error::DimensionMismatch {
                context: "BS-IRS channel rows",
                expected: m,
                actual: g.nrows(),
            });
        }
        if g.ncols() != f.len() {
            return Err(Error::DimensionMismatch {
                context: "IRS-UE channel length",
                expected: g.ncols(),
                actual: f.len(),
            });
        }
        let h_c = cascaded_channel(&h, &g, &f);
        Ok(ChannelRealization { h, g, f, h_c })
    }

    pub fn m(&self) -> usize {
        self.h.len()
    }

    pub fn l(&self) -> usize {
        self.f.len()
    }
}

/// Stacks `h` followed by the columns of `G·diag(f)`.
pub fn cascaded_channel(h: &CVec, g: &CMat, f: &CVec) -> CVec {
    let m = h.len();
    let l = f.len();
    let mut out = CVec::zeros(m * (l + 1));
    out.rows_mut(0, m).copy_from(h);
    for j in 0..l {
        for i in 0..m {
            out[m + j * m + i] = g[(i, j)] * f[j];
        }
    }
    out
}

/// One circularly-symmetric complex Gaussian sample with variance `var`.
pub fn cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> num_complex::Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(s * re, s * im)
}

/// Draws `h̃`, then `G̃` column-major, then `f̃`, and correlates them.
pub fn sample_realization<R: Rng + ?Sized>(stats: &ChannelStatistics, rng: &mut R) -> ChannelRealization {
    let m = stats.m();
    let l = stats.l();
    let PathGains { h: bh, g: bg, f: bf } = stats.gains;
    let h_t = CVec::from_fn(m, |_, _| cn(rng, bh));
    let mut g_t = CMat::zeros(m, l);
    for j in 0..l {
        for i in 0..m {
            g_t[(i, j)] = cn(rng, bg);
        }
    }
    let f_t = CVec::from_fn(l, |_, _| cn(rng, bf));

    let sp = &stats.spatial;
    let h = &sp.r_b_sqrt * h_t;
    let g = &sp.r_b_sqrt * g_t * &sp.r_i_sqrt;
    let f = &sp.r_i_sqrt * f_t;
    let h_c = cascaded_channel(&h, &g, &f);
    ChannelRealization { h, g, f, h_c }
}
