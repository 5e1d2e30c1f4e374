//! Closed-form coincidence and visibility models for two-photon interference
//! of phase-randomized weak coherent pulses.
//!
//! Times are in nanoseconds and frequencies in MHz throughout. The mutual
//! coherence time `t_c` is always the half-width at 1/e of the Gaussian
//! coherence factor `exp(-t²/t_c²)`; use [`tc_fwhm_convert`] when dealing with
//! full-width-at-half-maximum figures.

pub mod quad;

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest visibility achievable with phase-randomized coherent light.
pub const VM_CEILING: f64 = 0.5;

/// Default absolute tolerance for [`visibility_quadrature`].
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeKind {
    Square,
    Gaussian,
}

/// Single-pulse intensity envelope with full width at half maximum `t_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEnvelope {
    kind: EnvelopeKind,
    t_p: f64,
}

impl PulseEnvelope {
    pub fn new(kind: EnvelopeKind, t_p: f64) -> Result<Self> {
        if !(t_p > 0.0) || !t_p.is_finite() {
            return Err(Error::domain(format!("pulse FWHM must be > 0, got {t_p}")));
        }
        Ok(Self { kind, t_p })
    }

    pub fn square(t_p: f64) -> Result<Self> {
        Self::new(EnvelopeKind::Square, t_p)
    }

    pub fn kind(&self) -> EnvelopeKind {
        self.kind
    }

    pub fn t_p(&self) -> f64 {
        self.t_p
    }

    /// Standard deviation of the Gaussian envelope (FWHM = 2√(2 ln 2)·σ).
    pub fn gaussian_sigma(&self) -> f64 {
        self.t_p / (2.0 * (2.0 * LN_2).sqrt())
    }

    /// Peak-normalized intensity at time `t` relative to the pulse center.
    pub fn intensity(&self, t: f64) -> f64 {
        match self.kind {
            EnvelopeKind::Square => {
                if t.abs() <= 0.5 * self.t_p {
                    1.0
                } else {
                    0.0
                }
            }
            EnvelopeKind::Gaussian => (-4.0 * LN_2 * t * t / (self.t_p * self.t_p)).exp(),
        }
    }

    /// Normalized autocorrelation of the envelope (1 at zero lag).
    ///
    /// For the square pulse this is the triangle of [`triangle_corr`].
    pub fn autocorrelation(&self, lag: f64) -> f64 {
        match self.kind {
            EnvelopeKind::Square => triangle_unchecked(lag, self.t_p),
            EnvelopeKind::Gaussian => (-2.0 * LN_2 * lag * lag / (self.t_p * self.t_p)).exp(),
        }
    }
}

/// Parameters of the parallel-polarization fringe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeParams {
    pub t_p: f64,
    pub t_c: f64,
    pub v_m: f64,
}

impl FringeParams {
    pub fn new(t_p: f64, t_c: f64, v_m: f64) -> Result<Self> {
        let p = Self { t_p, t_c, v_m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_p > 0.0) {
            return Err(Error::domain(format!("t_p must be > 0, got {}", self.t_p)));
        }
        if !(self.t_c > 0.0) {
            return Err(Error::domain(format!("t_c must be > 0, got {}", self.t_c)));
        }
        check_vm(self.v_m)
    }
}

/// Parameters of the conventional dip `n_inf·[1 − v·exp(−dt²/t_c²)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipParams {
    pub n_inf: f64,
    pub v: f64,
    pub t_c: f64,
}

impl DipParams {
    pub fn new(n_inf: f64, v: f64, t_c: f64) -> Result<Self> {
        if !(n_inf > 0.0) {
            return Err(Error::domain(format!("n_inf must be > 0, got {n_inf}")));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("dip visibility must lie in [0, 1], got {v}")));
        }
        if !(t_c > 0.0) {
            return Err(Error::domain(format!("t_c must be > 0, got {t_c}")));
        }
        Ok(Self { n_inf, v, t_c })
    }

    /// Full width at half depth, `2√(ln 2)·t_c`.
    pub fn fwhm(&self) -> f64 {
        2.0 * LN_2.sqrt() * self.t_c
    }
}

/// Coherence-to-pulse ratio `t_c / t_p`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RatioMu(f64);

impl RatioMu {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0) || mu.is_nan() {
            return Err(Error::domain(format!("mu must be > 0, got {mu}")));
        }
        Ok(Self(mu))
    }

    pub fn from_times(t_c: f64, t_p: f64) -> Result<Self> {
        if !(t_p > 0.0) {
            return Err(Error::domain(format!("t_p must be > 0, got {t_p}")));
        }
        Self::new(t_c / t_p)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

fn check_vm(v_m: f64) -> Result<()> {
    if !(0.0..=VM_CEILING).contains(&v_m) {
        return Err(Error::domain(format!(
            "v_m must lie in [0, {VM_CEILING}], got {v_m}"
        )));
    }
    Ok(())
}

fn triangle_unchecked(t: f64, t_p: f64) -> f64 {
    (1.0 - t.abs() / t_p).max(0.0)
}

/// Orthogonal-polarization coincidence shape: `max(0, 1 − |t|/t_p)`.
pub fn triangle_corr(t: f64, t_p: f64) -> Result<f64> {
    if !(t_p > 0.0) {
        return Err(Error::domain(format!("t_p must be > 0, got {t_p}")));
    }
    Ok(triangle_unchecked(t, t_p))
}

/// Gaussian mutual-coherence factor `exp(−t²/t_c²)`.
pub fn coherence_factor(t: f64, t_c: f64) -> f64 {
    let x = t / t_c;
    (-x * x).exp()
}

/// Parallel-polarization fringe: triangle times `1 − v_m·exp(−t²/t_c²)`.
pub fn fringe_corr(t: f64, p: &FringeParams) -> Result<f64> {
    p.validate()?;
    Ok(triangle_unchecked(t, p.t_p) * (1.0 - p.v_m * coherence_factor(t, p.t_c)))
}

pub fn hom_dip(dt: f64, p: &DipParams) -> f64 {
    p.n_inf * (1.0 - p.v * coherence_factor(dt, p.t_c))
}

/// Integrated visibility for square pulses, in closed form:
///
/// `V = v_m·[√π·μ·erf(1/μ) + μ²·(exp(−1/μ²) − 1)]`
///
/// obtained by integrating the fringe and triangle over `|t| ≤ t_p`. The
/// second term is evaluated with `expm1` to stay accurate for large `μ`.
pub fn visibility_closed(mu: RatioMu, v_m: f64) -> Result<f64> {
    check_vm(v_m)?;
    Ok(v_m * unit_visibility(mu.get()))
}

fn unit_visibility(mu: f64) -> f64 {
    if mu > 1e4 {
        // Asymptotic series; the next term is O(μ⁻⁶).
        let x = 1.0 / (mu * mu);
        return 1.0 - x / 6.0 + x * x / 30.0;
    }
    let inv = 1.0 / mu;
    let erf_term = PI.sqrt() * mu * libm::erf(inv);
    let exp_term = if inv.is_finite() {
        mu * mu * (-inv * inv).exp_m1()
    } else {
        0.0
    };
    erf_term + exp_term
}

/// Integrated visibility by direct adaptive quadrature of both coincidence
/// distributions over `|t| ≤ t_p` (with `t_p` scaled to 1).
///
/// Independent of [`visibility_closed`]; used as its oracle.
pub fn visibility_quadrature(mu: RatioMu, v_m: f64, tol: f64) -> Result<f64> {
    check_vm(v_m)?;
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(Error::domain(format!("tol must lie in (0, 1e-6], got {tol}")));
    }
    let mu = mu.get();
    // Both integrands are even; integrate the half line and double. Splitting
    // the tolerance keeps the combined error of the ratio within `tol`.
    let half_tol = tol / 4.0;
    let parallel = quad::integrate(
        |t| (1.0 - t) * (1.0 - v_m * (-(t / mu) * (t / mu)).exp()),
        0.0,
        1.0,
        half_tol,
    )?;
    let orthogonal = quad::integrate(|t| 1.0 - t, 0.0, 1.0, half_tol)?;
    Ok(1.0 - parallel.value / orthogonal.value)
}

/// Visibility for Gaussian input pulses: `v_m·√(μ²/(1+μ²))`.
pub fn visibility_gaussian_pulse(mu: RatioMu, v_m: f64) -> f64 {
    let mu = mu.get();
    if mu.is_infinite() {
        return v_m;
    }
    v_m * mu / (1.0 + mu * mu).sqrt()
}

/// Visibility of the dip reconstructed with a coincidence window of total
/// width `t_r`: the integrated visibility with `t_p` replaced by `t_r/2`.
pub fn windowed_visibility(t_r: f64, t_c: f64, v_m: f64) -> Result<f64> {
    if !(t_r > 0.0) {
        return Err(Error::domain(format!("t_r must be > 0, got {t_r}")));
    }
    if !(t_c > 0.0) {
        return Err(Error::domain(format!("t_c must be > 0, got {t_c}")));
    }
    visibility_closed(RatioMu::new(t_c / (0.5 * t_r))?, v_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WidthConversion {
    /// 1/e half-width to FWHM.
    ToFwhm,
    /// FWHM to 1/e half-width.
    FromFwhm,
}

/// `2√(ln 2)`: FWHM of `exp(−t²/t_c²)` in units of `t_c`.
pub fn fwhm_factor() -> f64 {
    2.0 * LN_2.sqrt()
}

pub fn tc_fwhm_convert(value: f64, direction: WidthConversion) -> Result<f64> {
    if !(value > 0.0) {
        return Err(Error::domain(format!("width must be > 0, got {value}")));
    }
    Ok(match direction {
        WidthConversion::ToFwhm => value * fwhm_factor(),
        WidthConversion::FromFwhm => value / fwhm_factor(),
    })
}

/// Standard deviation (MHz) of a Gaussian frequency offset whose averaged
/// beat `⟨cos(2πΔν·t)⟩ = exp(−2π²σ²t²)` equals `exp(−t²/t_c²)`, `t_c` in ns.
pub fn sigma_from_tc(t_c: f64) -> Result<f64> {
    if !(t_c > 0.0) {
        return Err(Error::domain(format!("t_c must be > 0, got {t_c}")));
    }
    Ok(1e3 / (2.0_f64.sqrt() * PI * t_c))
}

/// Inverse of [`sigma_from_tc`].
pub fn tc_from_sigma(sigma_mhz: f64) -> Result<f64> {
    if !(sigma_mhz > 0.0) {
        return Err(Error::domain(format!(
            "frequency-noise std must be > 0, got {sigma_mhz}"
        )));
    }
    Ok(1e3 / (2.0_f64.sqrt() * PI * sigma_mhz))
}

/// Polarization extinction in dB from the normalized leakage level.
pub fn extinction_db(leak: f64) -> Result<f64> {
    if !(leak > 0.0 && leak <= 1.0) {
        return Err(Error::domain(format!("leak must lie in (0, 1], got {leak}")));
    }
    Ok(-10.0 * leak.log10())
}
