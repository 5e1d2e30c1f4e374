//! Simulation and analysis of time-resolved Hong-Ou-Mandel interference
//! between phase-randomized weak coherent pulses.
//!
//! * [`model`]: closed-form coincidence shapes and visibility laws.
//! * [`simulate`]: frame-based Monte Carlo of detector clicks.
//! * [`tcspc`]: coincidence histograms, normalization, windowed dip reconstruction.
//! * [`fit`]: weighted Levenberg–Marquardt fits and the integrated visibility estimator.

pub mod error;
pub mod fit;
pub mod model;
pub mod simulate;
pub mod tcspc;

pub use error::{Error, Result};
pub use model::{DipParams, FringeParams, PulseEnvelope, RatioMu};
pub use fit::{FitModel, FitResult};
pub use simulate::{DetectionEvent, Detector, EventStream, SimConfig};
pub use tcspc::{CoincidenceHistogram, DipCurve, NormalizationMode, NormalizedHistogram};
