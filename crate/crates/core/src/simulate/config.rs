//! Experiment configuration and its flat `key = value` text form.
//!
//! Keys carry their units (`pulse_fwhm_ns`, `rep_rate_mhz`, ...). Unknown keys
//! are rejected. Lines starting with `#` and blank lines are ignored, so a
//! config echoed into a stream header can be parsed back after stripping the
//! comment prefix.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, EnvelopeKind, PulseEnvelope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pulsed,
    Cw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    Parallel,
    Orthogonal,
}

/// Distribution of the per-frame frequency offset between the two arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    None,
    Gaussian { sigma_mhz: f64 },
    Uniform { half_span_mhz: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { sigma_mhz } if !(sigma_mhz > 0.0) || !sigma_mhz.is_finite() => {
                Err(Error::config("noise_sigma_mhz", format!("must be > 0, got {sigma_mhz}")))
            }
            NoiseModel::Uniform { half_span_mhz } if !(half_span_mhz > 0.0) || !half_span_mhz.is_finite() => Err(
                Error::config("noise_half_span_mhz", format!("must be > 0, got {half_span_mhz}")),
            ),
            _ => Ok(()),
        }
    }

    /// 1/e coherence time implied by Gaussian noise; `None` otherwise.
    pub fn coherence_time_ns(&self) -> Option<f64> {
        match *self {
            NoiseModel::Gaussian { sigma_mhz } => model::tc_from_sigma(sigma_mhz).ok(),
            _ => None,
        }
    }

    /// Phase-averaged beat `⟨cos(2πΔν·τ)⟩` at lag `τ` (ns) where a closed form exists.
    pub fn beat_average(&self, lag_ns: f64) -> Result<f64> {
        match *self {
            NoiseModel::None => Ok(1.0),
            NoiseModel::Gaussian { sigma_mhz } => {
                Ok(model::coherence_factor(lag_ns, model::tc_from_sigma(sigma_mhz)?))
            }
            NoiseModel::Uniform { .. } => Err(Error::Unsupported(
                "uniform frequency noise has no closed-form expected density; use Monte Carlo".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: Mode,
    pub envelope: PulseEnvelope,
    /// Pulse repetition rate (pulsed mode).
    pub rep_rate_mhz: f64,
    /// Length of one constant-field frame (CW mode).
    pub frame_length_ns: f64,
    /// Mean photon number per input pulse (per frame in CW mode), summed over both detectors.
    pub mean_photons_per_pulse: f64,
    pub polarization: Polarization,
    pub noise: NoiseModel,
    /// Field-overlap factor of the two arms.
    pub interference_contrast: f64,
    /// Power ratio of the weaker to the stronger arm.
    pub arm_imbalance: f64,
    pub dark_rate_khz: f64,
    /// Standard deviation of Gaussian timing jitter added to every click; 0 disables it.
    pub jitter_ps: f64,
    pub num_frames: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pulsed,
            envelope: PulseEnvelope::square(100.0).expect("positive width"),
            rep_rate_mhz: 2.0,
            frame_length_ns: 10_000.0,
            mean_photons_per_pulse: 0.1,
            polarization: Polarization::Parallel,
            noise: NoiseModel::None,
            interference_contrast: 1.0,
            arm_imbalance: 1.0,
            dark_rate_khz: 0.0,
            jitter_ps: 0.0,
            num_frames: 1_000_000,
            seed: 0,
        }
    }
}

/// Contrast that yields a given maximum visibility for balanced arms.
pub fn contrast_for_vm(v_m: f64) -> Result<f64> {
    if !(0.0..=model::VM_CEILING).contains(&v_m) {
        return Err(Error::domain(format!("v_m must lie in [0, 0.5], got {v_m}")));
    }
    Ok((2.0 * v_m).sqrt())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be > 0, got {v}")))
            }
        };
        positive("mean_photons_per_pulse", self.mean_photons_per_pulse)?;
        if !(0.0..=1.0).contains(&self.interference_contrast) {
            return Err(Error::config(
                "interference_contrast",
                format!("must lie in [0, 1], got {}", self.interference_contrast),
            ));
        }
        if !(self.arm_imbalance > 0.0 && self.arm_imbalance <= 1.0) {
            return Err(Error::config(
                "arm_imbalance",
                format!("must lie in (0, 1], got {}", self.arm_imbalance),
            ));
        }
        if !(self.dark_rate_khz >= 0.0) || !self.dark_rate_khz.is_finite() {
            return Err(Error::config("dark_rate_khz", "must be >= 0"));
        }
        if !(self.jitter_ps >= 0.0) || !self.jitter_ps.is_finite() {
            return Err(Error::config("jitter_ps", "must be >= 0"));
        }
        self.noise.validate()?;
        match self.mode {
            Mode::Pulsed => {
                positive("rep_rate_mhz", self.rep_rate_mhz)?;
                let period = 1e3 / self.rep_rate_mhz;
                if period <= 2.0 * self.envelope.t_p() {
                    return Err(Error::config(
                        "rep_rate_mhz",
                        format!(
                            "repetition period {period} ns must exceed twice the pulse FWHM ({} ns)",
                            self.envelope.t_p()
                        ),
                    ));
                }
            }
            Mode::Cw => positive("frame_length_ns", self.frame_length_ns)?,
        }
        if self.num_frames == 0 {
            return Err(Error::EmptyStream("num_frames is 0".into()));
        }
        Ok(())
    }

    /// Frame span in integer picoseconds.
    pub fn frame_span_ps(&self) -> i64 {
        match self.mode {
            Mode::Pulsed => (1e6 / self.rep_rate_mhz).round() as i64,
            Mode::Cw => (self.frame_length_ns * 1e3).round() as i64,
        }
    }

    /// `4r/(1+r)²`, the reduction of the interference term from unequal arm powers.
    pub fn balance_factor(&self) -> f64 {
        let r = self.arm_imbalance;
        4.0 * r / ((1.0 + r) * (1.0 + r))
    }

    /// Amplitude of the interference term at each detector: contrast·2√(I_A I_B)/(I_A + I_B).
    pub fn overlap_amplitude(&self) -> f64 {
        match self.polarization {
            Polarization::Parallel => self.interference_contrast * self.balance_factor().sqrt(),
            Polarization::Orthogonal => 0.0,
        }
    }

    /// Maximum visibility of the parallel-polarization fringe.
    pub fn v_m(&self) -> f64 {
        0.5 * self.interference_contrast * self.interference_contrast * self.balance_factor()
    }

    /// Parses the flat key-value form, starting from [`SimConfig::default`].
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        let mut envelope_kind = EnvelopeKind::Square;
        let mut t_p = cfg.envelope.t_p();
        let mut noise_kind: Option<String> = None;
        let mut sigma: Option<f64> = None;
        let mut half_span: Option<f64> = None;
        let mut tc: Option<f64> = None;
        let mut seen = std::collections::HashSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("`{key}`: expected a number, got `{v}`"),
                })
            };
            let int = |v: &str| -> Result<u64> {
                v.parse::<u64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("`{key}`: expected a non-negative integer, got `{v}`"),
                })
            };
            let bad_choice = |choices: &str| Error::Parse {
                line: line_no,
                message: format!("`{key}`: expected one of {choices}, got `{value}`"),
            };
            match key {
                "mode" => {
                    cfg.mode = match value {
                        "pulsed" => Mode::Pulsed,
                        "cw" => Mode::Cw,
                        _ => return Err(bad_choice("pulsed|cw")),
                    }
                }
                "envelope" => {
                    envelope_kind = match value {
                        "square" => EnvelopeKind::Square,
                        "gaussian" => EnvelopeKind::Gaussian,
                        _ => return Err(bad_choice("square|gaussian")),
                    }
                }
                "pulse_fwhm_ns" => t_p = num(value)?,
                "rep_rate_mhz" => cfg.rep_rate_mhz = num(value)?,
                "frame_length_ns" => cfg.frame_length_ns = num(value)?,
                "mean_photons_per_pulse" => cfg.mean_photons_per_pulse = num(value)?,
                "polarization" => {
                    cfg.polarization = match value {
                        "parallel" => Polarization::Parallel,
                        "orthogonal" => Polarization::Orthogonal,
                        _ => return Err(bad_choice("parallel|orthogonal")),
                    }
                }
                "noise" => match value {
                    "none" | "gaussian" | "uniform" => noise_kind = Some(value.to_string()),
                    _ => return Err(bad_choice("none|gaussian|uniform")),
                },
                "noise_sigma_mhz" => sigma = Some(num(value)?),
                "noise_half_span_mhz" => half_span = Some(num(value)?),
                "coherence_time_ns" => tc = Some(num(value)?),
                "interference_contrast" => cfg.interference_contrast = num(value)?,
                "arm_imbalance" => cfg.arm_imbalance = num(value)?,
                "dark_rate_khz" => cfg.dark_rate_khz = num(value)?,
                "jitter_ps" => cfg.jitter_ps = num(value)?,
                "num_frames" => cfg.num_frames = int(value)?,
                "seed" => cfg.seed = int(value)?,
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown key `{key}`"),
                    })
                }
            }
        }

        cfg.envelope = PulseEnvelope::new(envelope_kind, t_p)
            .map_err(|e| Error::config("pulse_fwhm_ns", e.to_string()))?;
        cfg.noise = match noise_kind.as_deref().unwrap_or("none") {
            "none" => {
                if sigma.is_some() || half_span.is_some() || tc.is_some() {
                    return Err(Error::config("noise", "noise parameters given with noise = none"));
                }
                NoiseModel::None
            }
            "gaussian" => {
                if half_span.is_some() {
                    return Err(Error::config("noise_half_span_mhz", "only valid with noise = uniform"));
                }
                let sigma_mhz = match (sigma, tc) {
                    (Some(s), None) => s,
                    (None, Some(t)) => model::sigma_from_tc(t)
                        .map_err(|e| Error::config("coherence_time_ns", e.to_string()))?,
                    (Some(_), Some(_)) => {
                        return Err(Error::config(
                            "coherence_time_ns",
                            "give either noise_sigma_mhz or coherence_time_ns, not both",
                        ))
                    }
                    (None, None) => {
                        return Err(Error::config(
                            "noise_sigma_mhz",
                            "gaussian noise needs noise_sigma_mhz or coherence_time_ns",
                        ))
                    }
                };
                NoiseModel::Gaussian { sigma_mhz }
            }
            _ => {
                if sigma.is_some() || tc.is_some() {
                    return Err(Error::config("noise_sigma_mhz", "only valid with noise = gaussian"));
                }
                NoiseModel::Uniform {
                    half_span_mhz: half_span.ok_or_else(|| {
                        Error::config("noise_half_span_mhz", "uniform noise needs noise_half_span_mhz")
                    })?,
                }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical key-value rendering; round-trips through [`SimConfig::from_kv_str`].
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            Mode::Pulsed => "pulsed",
            Mode::Cw => "cw",
        };
        let envelope = match self.envelope.kind() {
            EnvelopeKind::Square => "square",
            EnvelopeKind::Gaussian => "gaussian",
        };
        let polarization = match self.polarization {
            Polarization::Parallel => "parallel",
            Polarization::Orthogonal => "orthogonal",
        };
        let _ = writeln!(s, "mode = {mode}");
        let _ = writeln!(s, "envelope = {envelope}");
        let _ = writeln!(s, "pulse_fwhm_ns = {}", self.envelope.t_p());
        let _ = writeln!(s, "rep_rate_mhz = {}", self.rep_rate_mhz);
        let _ = writeln!(s, "frame_length_ns = {}", self.frame_length_ns);
        let _ = writeln!(s, "mean_photons_per_pulse = {}", self.mean_photons_per_pulse);
        let _ = writeln!(s, "polarization = {polarization}");
        match self.noise {
            NoiseModel::None => {
                let _ = writeln!(s, "noise = none");
            }
            NoiseModel::Gaussian { sigma_mhz } => {
                let _ = writeln!(s, "noise = gaussian");
                let _ = writeln!(s, "noise_sigma_mhz = {sigma_mhz}");
            }
            NoiseModel::Uniform { half_span_mhz } => {
                let _ = writeln!(s, "noise = uniform");
                let _ = writeln!(s, "noise_half_span_mhz = {half_span_mhz}");
            }
        }
        let _ = writeln!(s, "interference_contrast = {}", self.interference_contrast);
        let _ = writeln!(s, "arm_imbalance = {}", self.arm_imbalance);
        let _ = writeln!(s, "dark_rate_khz = {}", self.dark_rate_khz);
        let _ = writeln!(s, "jitter_ps = {}", self.jitter_ps);
        let _ = writeln!(s, "num_frames = {}", self.num_frames);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = SimConfig::default();
        assert_eq!(c.envelope.t_p(), 100.0);
        assert_eq!(c.rep_rate_mhz, 2.0);
        assert_eq!(c.mean_photons_per_pulse, 0.1);
        assert_eq!(c.frame_span_ps(), 500_000);
        c.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut c = SimConfig::default();
        c.noise = NoiseModel::Gaussian { sigma_mhz: 0.1 + 0.2 };
        c.interference_contrast = 0.959;
        c.seed = u64::MAX;
        let back = SimConfig::from_kv_str(&c.to_kv_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn coherence_time_key_sets_sigma() {
        let c = SimConfig::from_kv_str("noise = gaussian\ncoherence_time_ns = 50\n").unwrap();
        match c.noise {
            NoiseModel::Gaussian { sigma_mhz } => assert!((sigma_mhz - 4.5016).abs() < 1e-4),
            other => panic!("{other:?}"),
        }
        assert!((c.noise.coherence_time_ns().unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        let e = SimConfig::from_kv_str("mode = pulsed\npulse_fwhm = 100\n").unwrap_err();
        assert_eq!(
            e,
            Error::Parse {
                line: 2,
                message: "unknown key `pulse_fwhm`".into()
            }
        );
        assert!(matches!(SimConfig::from_kv_str("seed 4"), Err(Error::Parse { line: 1, .. })));
        assert!(SimConfig::from_kv_str("seed = -4").is_err());
        assert!(SimConfig::from_kv_str("seed = 1\nseed = 2").is_err());
        assert!(SimConfig::from_kv_str("noise = gaussian").is_err());
        assert!(SimConfig::from_kv_str("noise_sigma_mhz = 3").is_err());
    }

    #[test]
    fn validation_errors() {
        let err = SimConfig::from_kv_str("rep_rate_mhz = 6").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "rep_rate_mhz"));
        assert!(matches!(
            SimConfig::from_kv_str("num_frames = 0"),
            Err(Error::EmptyStream(_))
        ));
        assert!(SimConfig::from_kv_str("interference_contrast = 1.2").is_err());
        assert!(SimConfig::from_kv_str("arm_imbalance = 0").is_err());
        assert!(SimConfig::from_kv_str("mean_photons_per_pulse = 0").is_err());
    }

    #[test]
    fn visibility_from_contrast() {
        let mut c = SimConfig::default();
        c.interference_contrast = contrast_for_vm(0.46).unwrap();
        assert!((c.v_m() - 0.46).abs() < 1e-15);
        c.arm_imbalance = 0.25;
        assert!((c.balance_factor() - 0.64).abs() < 1e-15);
        c.interference_contrast = 1.0;
        assert!(c.v_m() <= 0.5);
    }
}
