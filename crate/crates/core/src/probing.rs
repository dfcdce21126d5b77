//! Bidirectional channel probing with least-squares estimation.
//!
//! Bob sends a scalar pilot uplink; Alice sends an `M × M` unitary pilot
//! downlink. After LS estimation and Bob's transpose both sides hold an
//! `M`-vector observation of `Pᵀ(h + GΘf)` plus their own noise.

use std::f64::consts::PI;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{c, identity, kron, max_abs, CMat, CVec};

/// A precoder / IRS configuration pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PkgSolution {
    /// `M × M` BS precoding matrix.
    pub precoder: CMat,
    /// IRS reflecting coefficients, unit modulus.
    pub theta: CVec,
}

/// Unit-modulus tolerance on `θ`.
pub const UNIT_MODULUS_TOL: f64 = 1e-9;
/// Relative tolerance on `Tr(PPᴴ) = P_a·M`.
pub const POWER_TOL: f64 = 1e-6;

impl PkgSolution {
    pub fn new(precoder: CMat, theta: CVec) -> Self {
        PkgSolution { precoder, theta }
    }

    pub fn m(&self) -> usize {
        self.precoder.nrows()
    }

    pub fn l(&self) -> usize {
        self.theta.len()
    }

    /// `[1, θᵀ]ᵀ`.
    pub fn theta_tilde(&self) -> CVec {
        let mut t = CVec::zeros(self.l() + 1);
        t[0] = c(1.0, 0.0);
        t.rows_mut(1, self.l()).copy_from(&self.theta);
        t
    }

    pub fn power(&self) -> f64 {
        crate::linalg::frobenius_sq(&self.precoder)
    }

    /// Largest deviation of `|θ_l|` from one.
    pub fn unit_modulus_error(&self) -> f64 {
        self.theta.iter().fold(0.0, |acc, z| acc.max((z.norm() - 1.0).abs()))
    }

    /// Relative deviation of `Tr(PPᴴ)` from `P_a·M`.
    pub fn power_error(&self, p_a: f64) -> f64 {
        let target = p_a * self.m() as f64;
        (self.power() - target).abs() / target
    }

    /// Checks both feasibility constraints.
    pub fn validate(&self, p_a: f64) -> Result<()> {
        if self.precoder.nrows() != self.precoder.ncols() {
            return Err(Error::DimensionMismatch {
                context: "square precoder",
                expected: self.precoder.nrows(),
                actual: self.precoder.ncols(),
            });
        }
        let um = self.unit_modulus_error();
        if um > UNIT_MODULUS_TOL {
            return Err(Error::Normalization(format!("|theta_l| deviates from 1 by {um:.3e}")));
        }
        let pe = self.power_error(p_a);
        if pe > POWER_TOL {
            return Err(Error::Normalization(format!("Tr(PP^H) off by relative {pe:.3e}")));
        }
        Ok(())
    }
}

/// LS channel observations at Alice and (transposed) at Bob.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingObservation {
    pub y_a: CVec,
    pub y_b: CVec,
}

fn check_dims(real: &ChannelRealization, sol: &PkgSolution) -> Result<()> {
    if sol.m() != real.m() {
        return Err(Error::DimensionMismatch {
            context: "precoder vs. BS antennas",
            expected: real.m(),
            actual: sol.m(),
        });
    }
    if sol.l() != real.l() {
        return Err(Error::DimensionMismatch {
            context: "IRS phases vs. elements",
            expected: real.l(),
            actual: sol.l(),
        });
    }
    Ok(())
}

/// `h + G·Θ·f`, evaluated directly.
pub fn combined_channel(real: &ChannelRealization, sol: &PkgSolution) -> Result<CVec> {
    check_dims(real, sol)?;
    let theta_f = real.f.component_mul(&sol.theta);
    Ok(&real.h + &real.g * theta_f)
}

/// `(θ̃ᵀ ⊗ I_M)·h_c`, the same quantity through the cascaded channel.
pub fn combined_channel_cascaded(h_c: &CVec, theta: &CVec, m: usize) -> Result<CVec> {
    let l = theta.len();
    if h_c.len() != m * (l + 1) {
        return Err(Error::DimensionMismatch {
            context: "cascaded channel length",
            expected: m * (l + 1),
            actual: h_c.len(),
        });
    }
    let mut tt = CMat::zeros(1, l + 1);
    tt[(0, 0)] = c(1.0, 0.0);
    for (j, z) in theta.iter().enumerate() {
        tt[(0, j + 1)] = *z;
    }
    Ok(kron(&tt, &identity(m)) * h_c)
}

/// Uplink LS estimate at Alice: `√P_b Pᵀ(h+GΘf) + Pᵀ n_a s_u*`.
pub fn uplink_probe(
    real: &ChannelRealization,
    sol: &PkgSolution,
    p_b: f64,
    noise_a: &CVec,
    pilot: num_complex::Complex64,
) -> Result<CVec> {
    if (pilot.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!("uplink pilot |s_u| = {} must be 1", pilot.norm())));
    }
    check_noise(noise_a, real.m())?;
    let hc = combined_channel(real, sol)?;
    let pt = sol.precoder.transpose();
    Ok(&pt * hc * c(p_b.sqrt(), 0.0) + &pt * noise_a * pilot.conj())
}

/// Downlink LS estimate at Bob, transposed: `Pᵀ(h+GΘf) + S_dᵀ n_bᵀ`.
///
/// `noise_b` holds the entries of Bob's `1 × M` noise row.
pub fn downlink_probe(
    real: &ChannelRealization,
    sol: &PkgSolution,
    noise_b: &CVec,
    pilot: &CMat,
) -> Result<CVec> {
    let m = real.m();
    check_noise(noise_b, m)?;
    if pilot.nrows() != m || pilot.ncols() != m {
        return Err(Error::DimensionMismatch {
            context: "downlink pilot",
            expected: m,
            actual: pilot.nrows(),
        });
    }
    let gram_err = max_abs(&(pilot.adjoint() * pilot - identity(m)));
    if gram_err > 1e-10 {
        return Err(Error::InvalidConfig(format!(
            "downlink pilot is not unitary (deviation {gram_err:.3e})"
        )));
    }
    let hc = combined_channel(real, sol)?;
    Ok(sol.precoder.transpose() * hc + pilot.transpose() * noise_b)
}

fn check_noise(n: &CVec, m: usize) -> Result<()> {
    if n.len() != m {
        return Err(Error::DimensionMismatch {
            context: "noise vector",
            expected: m,
            actual: n.len(),
        });
    }
    Ok(())
}

/// Unitary DFT matrix, `[S]_{j,k} = e^{-2πi jk/M}/√M`.
pub fn dft_pilot(m: usize) -> CMat {
    let scale = 1.0 / (m as f64).sqrt();
    CMat::from_fn(m, m, |j, k| {
        let ang = -2.0 * PI * (j * k) as f64 / m as f64;
        c(scale * ang.cos(), scale * ang.sin())
    })
}

/// Both observations with the default pilots (`s_u = 1`, DFT `S_d`).
pub fn probe(
    real: &ChannelRealization,
    sol: &PkgSolution,
    p_b: f64,
    noise_a: &CVec,
    noise_b: &CVec,
) -> Result<ProbingObservation> {
    Ok(ProbingObservation {
        y_a: uplink_probe(real, sol, p_b, noise_a, c(1.0, 0.0))?,
        y_b: downlink_probe(real, sol, noise_b, &dft_pilot(real.m()))?,
    })
}
