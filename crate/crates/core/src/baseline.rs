//! Water-filling baseline: equal IRS phases plus eigenmode power allocation.
//!
//! With every IRS element at the same phase the reflected path contributes
//! `β_G β_f Σ_ij [R_I ⊙ R_I]_ij` to the effective variance `δ_h²`. The
//! normalized precoder is then built on the eigenbasis of `R_B`, so the
//! approximate rate separates over modes:
//!
//! ```text
//! f(q) = log₂((1 + P_b u)(1 + P_a u) / (1 + (P_a + P_b) u)),  u = δ_h² q / δ²
//! maximize Σ f(q_i)  s.t.  Σ q_i / p_{B,i} = M,  q_i ≥ 0
//! ```
//!
//! `f'(0) = 0` and `f` is convex near the origin, so the per-mode best
//! response to a price is taken on the concave branch only and the active set
//! (strongest `k` modes) is enumerated; the best feasible set wins.

use std::f64::consts::LN_2;

use crate::channel::ChannelStatistics;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{c, hermitian_eigen, CMat, CVec};
use crate::probing::PkgSolution;
use crate::skr::effective_variance;

/// Eigenvalues of `R_B` below this are treated as inactive modes.
pub const INACTIVE_MODE_EIGENVALUE: f64 = 1e-12;
const MAX_BISECTION: usize = 400;

pub fn equal_phase_vector(l: usize, phase: f64) -> CVec {
    CVec::from_element(l, c(phase.cos(), phase.sin()))
}

/// Result of the eigenmode allocation.
#[derive(Debug, Clone)]
pub struct WaterfillSolution {
    /// Squared eigenvalues `q_i = p_i²`, aligned with `p_b_eigs`.
    pub q: Vec<f64>,
    /// Eigenvalues of `R_B`, descending.
    pub p_b_eigs: Vec<f64>,
    pub mu: f64,
    pub objective_bits: f64,
    /// Largest relative stationarity error `|p_{B,i} f'(q_i) − μ| / μ` over active modes.
    pub kkt_residual: f64,
    /// Normalized precoder, `Tr(P_e P_eᴴ) = M`.
    pub p_e_opt: CMat,
}

impl WaterfillSolution {
    pub fn constraint_residual(&self) -> f64 {
        let m = self.q.len() as f64;
        let used: f64 = self
            .q
            .iter()
            .zip(&self.p_b_eigs)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, p)| q / p)
            .sum();
        (used - m).abs()
    }
}

/// One eigenmode's contribution to the approximate rate.
#[derive(Debug, Clone, Copy)]
struct ModeCurve {
    /// `δ_h² / δ²`.
    scale: f64,
    p_a: f64,
    p_b: f64,
}

impl ModeCurve {
    fn new(delta_h2: f64, p_a: f64, p_b: f64, noise: f64) -> Self {
        ModeCurve {
            scale: delta_h2 / noise,
            p_a,
            p_b,
        }
    }

    fn value(&self, q: f64) -> f64 {
        let u = self.scale * q;
        ((self.p_b * u).ln_1p() + (self.p_a * u).ln_1p() - ((self.p_a + self.p_b) * u).ln_1p()) / LN_2
    }

    fn slope_u(&self, u: f64) -> f64 {
        let (a, b) = (self.p_a, self.p_b);
        let s = a + b;
        a * b * u * (2.0 + s * u) / ((1.0 + a * u) * (1.0 + b * u) * (1.0 + s * u))
    }

    fn derivative(&self, q: f64) -> f64 {
        self.scale * self.slope_u(self.scale * q) / LN_2
    }

    /// Location of the maximum slope, i.e. the start of the concave branch.
    fn inflection(&self) -> f64 {
        let (a, b) = (self.p_a, self.p_b);
        let lo = (1e-6 / (a + b)).ln();
        let hi = (1e6 / a.min(b)).ln();
        let (mut x0, mut x1) = (lo, hi);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let m1 = x1 - phi * (x1 - x0);
            let m2 = x0 + phi * (x1 - x0);
            if self.slope_u(m1.exp()) < self.slope_u(m2.exp()) {
                x0 = m1;
            } else {
                x1 = m2;
            }
        }
        (0.5 * (x0 + x1)).exp() / self.scale
    }

    /// Root of `f'(q) = price` on the concave branch, if the price is below
    /// the peak slope.
    fn concave_root(&self, price: f64, q_peak: f64) -> Option<f64> {
        if price >= self.derivative(q_peak) {
            return None;
        }
        let mut lo = q_peak;
        let mut hi = q_peak.max(f64::MIN_POSITIVE) * 2.0;
        while self.derivative(hi) > price {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return None;
            }
        }
        for _ in 0..MAX_BISECTION {
            let mid = (lo * hi).sqrt();
            if self.derivative(mid) > price {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// Single-mode term of the scalarized approximate rate, in bits; zero at `q = 0`.
pub fn per_mode_objective(q: f64, delta_h2: f64, p_a: f64, p_b: f64, noise: f64) -> f64 {
    ModeCurve::new(delta_h2, p_a, p_b, noise).value(q)
}

/// Derivative of [`per_mode_objective`] with respect to `q`.
pub fn per_mode_derivative(q: f64, delta_h2: f64, p_a: f64, p_b: f64, noise: f64) -> f64 {
    ModeCurve::new(delta_h2, p_a, p_b, noise).derivative(q)
}

struct ActiveSetSolution {
    q: Vec<f64>,
    mu: f64,
    objective: f64,
    kkt: f64,
}

/// Allocation over the `k` strongest modes, all on their concave branch.
fn solve_active_set(curve: &ModeCurve, eigs: &[f64], k: usize, m: f64, tol: f64) -> Result<Option<ActiveSetSolution>> {
    let q_peak = curve.inflection();
    let d_peak = curve.derivative(q_peak);
    let active = &eigs[..k];
    if k == 1 {
        // the constraint alone fixes q; it may sit on the convex branch at low SNR
        let q = vec![m * active[0]];
        let mu = active[0] * curve.derivative(q[0]);
        let objective = curve.value(q[0]);
        return Ok(Some(ActiveSetSolution { q, mu, objective, kkt: 0.0 }));
    }
    // all active prices μ/p_i must stay below the peak slope
    let mu_max = active.iter().map(|p| p * d_peak).fold(f64::INFINITY, f64::min);

    let allocate = |mu: f64| -> Vec<f64> {
        active
            .iter()
            .map(|p| curve.concave_root(mu / p, q_peak).unwrap_or(q_peak))
            .collect()
    };
    let budget = |q: &[f64]| -> f64 { q.iter().zip(active).map(|(q, p)| q / p).sum() };

    let mut hi = mu_max * (1.0 - 1e-12);
    if budget(&allocate(hi)) > m {
        return Ok(None);
    }
    let mut lo = hi;
    let mut grow = 0;
    while budget(&allocate(lo)) < m {
        hi = lo;
        lo /= 2.0;
        grow += 1;
        if grow > 2000 || lo == 0.0 {
            return Err(Error::NonConvergence {
                what: "water level bracket",
                iterations: grow,
                residual: f64::NAN,
            });
        }
    }
    let mut iterations = 0;
    let mut q;
    loop {
        let mid = (lo * hi).sqrt();
        q = allocate(mid);
        let used = budget(&q);
        if (used - m).abs() <= tol * m || (hi - lo) <= 1e-16 * hi {
            lo = mid;
            hi = mid;
            break;
        }
        if used > m {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
        if iterations >= MAX_BISECTION {
            let residual = (budget(&q) - m).abs();
            if residual > 1e3 * tol * m {
                return Err(Error::NonConvergence {
                    what: "water-filling bisection",
                    iterations,
                    residual,
                });
            }
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    let scale = m / budget(&q);
    for v in q.iter_mut() {
        *v *= scale;
    }
    let objective = q.iter().map(|&v| curve.value(v)).sum();
    let kkt = q
        .iter()
        .zip(active)
        .map(|(&v, p)| (p * curve.derivative(v) - mu).abs() / mu)
        .fold(0.0, f64::max);
    Ok(Some(ActiveSetSolution { q, mu, objective, kkt }))
}

/// Eigenmode allocation for given `R_B` eigenvalues (descending order).
///
/// Returns `(q, μ, objective_bits, kkt_residual)`.
pub fn waterfill_modes(
    eigs: &[f64],
    delta_h2: f64,
    p_a: f64,
    p_b: f64,
    noise: f64,
    tol: f64,
) -> Result<(Vec<f64>, f64, f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance {tol} must be positive")));
    }
    if eigs.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidConfig("mode eigenvalues must be sorted descending".into()));
    }
    if !(delta_h2 > 0.0 && p_a > 0.0 && p_b > 0.0 && noise > 0.0) {
        return Err(Error::InvalidConfig("water-filling needs positive powers and variance".into()));
    }
    let m = eigs.len() as f64;
    let usable = eigs.iter().take_while(|&&p| p >= INACTIVE_MODE_EIGENVALUE).count();
    if usable == 0 {
        return Err(Error::NotPositiveDefinite("R_B has no usable eigenmode"));
    }
    let curve = ModeCurve::new(delta_h2, p_a, p_b, noise);
    let mut best: Option<ActiveSetSolution> = None;
    for k in (1..=usable).rev() {
        if let Some(sol) = solve_active_set(&curve, eigs, k, m, tol)? {
            if best.as_ref().is_none_or(|b| sol.objective > b.objective) {
                best = Some(sol);
            }
        }
    }
    let best = best.ok_or(Error::NonConvergence {
        what: "water-filling (no feasible active set)",
        iterations: usable,
        residual: f64::NAN,
    })?;
    let mut q = best.q;
    q.resize(eigs.len(), 0.0);
    Ok((q, best.mu, best.objective, best.kkt))
}

/// Solves the eigenmode power allocation for the correlation in `stats`.
pub fn waterfill(
    stats: &ChannelStatistics,
    delta_h2: f64,
    p_a: f64,
    p_b: f64,
    noise: f64,
    tol: f64,
) -> Result<WaterfillSolution> {
    let (eigs, _) = hermitian_eigen(&stats.spatial.r_b)?;
    if *eigs.last().unwrap() < -INACTIVE_MODE_EIGENVALUE {
        return Err(Error::Indefinite {
            min_eigenvalue: *eigs.last().unwrap(),
        });
    }
    let (q, mu, objective_bits, kkt_residual) = waterfill_modes(&eigs, delta_h2, p_a, p_b, noise, tol)?;
    let mut sol = WaterfillSolution {
        q,
        p_b_eigs: eigs,
        mu,
        objective_bits,
        kkt_residual,
        p_e_opt: CMat::zeros(0, 0),
    };
    sol.p_e_opt = reconstruct_precoder(&sol, stats)?;
    Ok(sol)
}

/// `P_e = (R_B^{-1/2} U_B Λ U_Bᴴ)*` with `Λ = diag(√q_i)`, which equals
/// `(U_B Λ_B^{-1/2} Λ U_Bᴴ)*`.
pub fn reconstruct_precoder(sol: &WaterfillSolution, stats: &ChannelStatistics) -> Result<CMat> {
    let (eigs, u) = hermitian_eigen(&stats.spatial.r_b)?;
    let m = eigs.len();
    if sol.q.len() != m {
        return Err(Error::DimensionMismatch {
            context: "allocation length",
            expected: m,
            actual: sol.q.len(),
        });
    }
    let mut scaled = u.clone();
    for k in 0..m {
        let coef = if sol.q[k] == 0.0 {
            0.0
        } else if eigs[k] < INACTIVE_MODE_EIGENVALUE {
            return Err(Error::NotPositiveDefinite("R_B is singular on an active mode"));
        } else {
            (sol.q[k] / eigs[k]).sqrt()
        };
        for i in 0..m {
            scaled[(i, k)] *= coef;
        }
    }
    Ok((scaled * u.adjoint()).conjugate())
}

/// Equal-phase IRS plus water-filled precoder scaled to `P = √P_a·P_e`.
pub fn baseline_solution(config: &SystemConfig, stats: &ChannelStatistics) -> Result<PkgSolution> {
    baseline_detail(config, stats).map(|(sol, _)| sol)
}

/// [`baseline_solution`] together with the underlying allocation.
pub fn baseline_detail(config: &SystemConfig, stats: &ChannelStatistics) -> Result<(PkgSolution, WaterfillSolution)> {
    config.validate()?;
    let theta = equal_phase_vector(stats.l(), 0.0);
    let delta_h2 = effective_variance(&theta, stats);
    let wf = waterfill(stats, delta_h2, config.p_a, config.p_b, config.noise_power, 1e-12)?;
    let precoder = &wf.p_e_opt * c(config.p_a.sqrt(), 0.0);
    Ok((PkgSolution::new(precoder, theta), wf))
}
