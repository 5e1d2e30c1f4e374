//! Frame-based Monte Carlo of detector clicks behind the polarization HOM
//! interferometer.
//!
//! Each frame (one pulse, or one CW segment) gets its own random global phases
//! for the two arms and one frequency offset drawn from the noise model. The
//! two output ports see
//!
//! `I_{1,2}(t) = ½ s(t) [1 ± a·cos(θ_B − θ_A + 2πΔν·t)]`
//!
//! with `a` the overlap amplitude (zero for orthogonal polarizations), and
//! clicks are drawn from that inhomogeneous Poisson process by thinning.
//! Every frame uses an independent ChaCha stream keyed by its index, so the
//! output does not depend on how frames are scheduled across threads.

mod config;
pub mod format;

use std::f64::consts::PI;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{contrast_for_vm, Mode, NoiseModel, Polarization, SimConfig};

use crate::error::{Error, Result};
use crate::model::EnvelopeKind;

const FRAMES_PER_TASK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Detector {
    D1,
    D2,
}

impl Detector {
    pub fn index(self) -> usize {
        match self {
            Detector::D1 => 0,
            Detector::D2 => 1,
        }
    }
}

/// One click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub detector: Detector,
    /// Absolute time in picoseconds.
    pub time_ps: i64,
    pub frame_index: u64,
}

/// Simulated clicks for a contiguous block of frames, sorted by `(frame_index, time_ps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub config: SimConfig,
    pub first_frame: u64,
    pub frame_count: u64,
    pub events: Vec<DetectionEvent>,
    /// Clicks per detector.
    pub singles: [u64; 2],
}

impl EventStream {
    pub fn new(
        config: SimConfig,
        first_frame: u64,
        frame_count: u64,
        events: Vec<DetectionEvent>,
    ) -> Self {
        let mut singles = [0u64; 2];
        for e in &events {
            singles[e.detector.index()] += 1;
        }
        Self {
            config,
            first_frame,
            frame_count,
            events,
            singles,
        }
    }

    pub fn frame_span_ps(&self) -> i64 {
        self.config.frame_span_ps()
    }

    /// Checks ordering, frame bounds and the singles totals.
    pub fn validate(&self) -> Result<()> {
        let span = self.frame_span_ps();
        let end = self.first_frame + self.frame_count;
        let mut singles = [0u64; 2];
        let mut prev: Option<&DetectionEvent> = None;
        for (i, e) in self.events.iter().enumerate() {
            if e.frame_index < self.first_frame || e.frame_index >= end {
                return Err(Error::domain(format!(
                    "event {i} has frame {} outside [{}, {end})",
                    e.frame_index, self.first_frame
                )));
            }
            let start = e.frame_index as i64 * span;
            if e.time_ps < start || e.time_ps >= start + span {
                return Err(Error::domain(format!("event {i} lies outside its frame")));
            }
            if let Some(p) = prev {
                if (p.frame_index, p.time_ps) > (e.frame_index, e.time_ps) {
                    return Err(Error::domain(format!("event {i} is out of order")));
                }
            }
            singles[e.detector.index()] += 1;
            prev = Some(e);
        }
        if singles != self.singles {
            return Err(Error::domain("singles totals disagree with the events"));
        }
        Ok(())
    }
}

/// Interference-term bookkeeping shared by the sampler and its tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldModel {
    /// Overlap amplitude `a` in `½[1 ± a·cos φ]`.
    pub amplitude: f64,
}

impl FieldModel {
    pub fn from_config(config: &SimConfig) -> Self {
        Self {
            amplitude: config.overlap_amplitude(),
        }
    }

    /// Fractions of the input intensity reaching D1 and D2 at relative phase `phase`.
    pub fn port_fractions(&self, phase: f64) -> [f64; 2] {
        let beat = self.amplitude * phase.cos();
        [0.5 * (1.0 + beat), 0.5 * (1.0 - beat)]
    }
}

/// Expected coincidence density at `lag_ns`, normalized so that the
/// orthogonal-polarization reference peaks at 1. Dark counts are not included.
pub fn expected_density(config: &SimConfig, lag_ns: f64) -> Result<f64> {
    let beat = config.noise.beat_average(lag_ns)?;
    let v_m = match config.polarization {
        Polarization::Parallel => config.v_m(),
        Polarization::Orthogonal => 0.0,
    };
    Ok(match config.mode {
        Mode::Pulsed => config.envelope.autocorrelation(lag_ns) * (1.0 - v_m * beat),
        Mode::Cw => {
            // Pairs from different frames carry independent phases and do not interfere.
            let same_frame = (1.0 - lag_ns.abs() / config.frame_length_ns).max(0.0);
            1.0 - v_m * beat * same_frame
        }
    })
}

/// Runs a pulsed-mode simulation on the global thread pool.
pub fn run_pulsed(config: &SimConfig) -> Result<EventStream> {
    if config.mode != Mode::Pulsed {
        return Err(Error::config("mode", "run_pulsed requires mode = pulsed"));
    }
    Simulator::new(config.clone())?.run()
}

/// Runs a CW-mode simulation on the global thread pool.
pub fn run_cw(config: &SimConfig) -> Result<EventStream> {
    if config.mode != Mode::Cw {
        return Err(Error::config("mode", "run_cw requires mode = cw"));
    }
    Simulator::new(config.clone())?.run()
}

#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    workers: Option<usize>,
    base_rng: ChaCha8Rng,
    span_ps: i64,
    candidates: Option<Poisson<f64>>,
    dark: Option<Poisson<f64>>,
    jitter: Option<Normal<f64>>,
    noise: FrequencyNoise,
    field: FieldModel,
    majorant: f64,
}

#[derive(Debug, Clone, Copy)]
enum FrequencyNoise {
    None,
    Gaussian(Normal<f64>),
    Uniform(Uniform<f64>),
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let span_ps = config.frame_span_ps();
        let majorant = 1.0 + config.interference_contrast;
        // Mean candidate count per detector per frame.
        let candidate_mean = 0.5 * config.mean_photons_per_pulse * majorant;
        let dark_mean = config.dark_rate_khz * 1e-9 * span_ps as f64;
        let poisson = |mean: f64| -> Result<Option<Poisson<f64>>> {
            if mean > 0.0 {
                Poisson::new(mean)
                    .map(Some)
                    .map_err(|e| Error::config("mean_photons_per_pulse", e.to_string()))
            } else {
                Ok(None)
            }
        };
        let noise = match config.noise {
            NoiseModel::None => FrequencyNoise::None,
            NoiseModel::Gaussian { sigma_mhz } => FrequencyNoise::Gaussian(
                Normal::new(0.0, sigma_mhz).map_err(|e| Error::config("noise_sigma_mhz", e.to_string()))?,
            ),
            NoiseModel::Uniform { half_span_mhz } => FrequencyNoise::Uniform(
                Uniform::new(-half_span_mhz, half_span_mhz)
                    .map_err(|e| Error::config("noise_half_span_mhz", e.to_string()))?,
            ),
        };
        let jitter = if config.jitter_ps > 0.0 {
            Some(Normal::new(0.0, config.jitter_ps).map_err(|e| Error::config("jitter_ps", e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            base_rng: ChaCha8Rng::seed_from_u64(config.seed),
            span_ps,
            candidates: poisson(candidate_mean)?,
            dark: poisson(dark_mean)?,
            jitter,
            noise,
            field: FieldModel::from_config(&config),
            majorant,
            config,
            workers: None,
        })
    }

    /// Caps the number of threads; `None` uses the global pool.
    pub fn workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn run(&self) -> Result<EventStream> {
        self.run_frames(0..self.config.num_frames)
    }

    /// Simulates a sub-range of frames. Concatenating consecutive ranges gives
    /// exactly the events of a single full run.
    pub fn run_frames(&self, frames: Range<u64>) -> Result<EventStream> {
        if frames.is_empty() {
            return Err(Error::EmptyStream("empty frame range".into()));
        }
        if frames.end > self.config.num_frames {
            return Err(Error::domain(format!(
                "frame range {frames:?} exceeds num_frames = {}",
                self.config.num_frames
            )));
        }
        let tasks: Vec<Range<u64>> = (frames.start..frames.end)
            .step_by(FRAMES_PER_TASK as usize)
            .map(|s| s..(s + FRAMES_PER_TASK).min(frames.end))
            .collect();
        let generate = || -> Vec<Vec<DetectionEvent>> {
            tasks
                .par_iter()
                .map(|r| {
                    let mut out = Vec::new();
                    for f in r.clone() {
                        self.frame(f, &mut out);
                    }
                    out
                })
                .collect()
        };
        let parts = match self.workers {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::config("workers", e.to_string()))?
                .install(generate),
            None => generate(),
        };
        let events = parts.concat();
        Ok(EventStream::new(
            self.config.clone(),
            frames.start,
            frames.end - frames.start,
            events,
        ))
    }

    fn frame_rng(&self, frame_index: u64) -> ChaCha8Rng {
        let mut rng = self.base_rng.clone();
        rng.set_stream(frame_index);
        rng.set_word_pos(0);
        rng
    }

    /// Appends the clicks of one frame, sorted by time.
    fn frame(&self, frame_index: u64, out: &mut Vec<DetectionEvent>) {
        let mut rng = self.frame_rng(frame_index);
        let first = out.len();
        let theta_a: f64 = rng.random_range(0.0..2.0 * PI);
        let theta_b: f64 = rng.random_range(0.0..2.0 * PI);
        let phase0 = theta_b - theta_a;
        let dnu_mhz = match self.noise {
            FrequencyNoise::None => 0.0,
            FrequencyNoise::Gaussian(d) => d.sample(&mut rng),
            FrequencyNoise::Uniform(d) => d.sample(&mut rng),
        };
        let span_ns = self.span_ps as f64 * 1e-3;
        let start_ps = frame_index as i64 * self.span_ps;
        let envelope = self.config.envelope;
        let center_ns = match self.config.mode {
            Mode::Pulsed => 0.5 * span_ns,
            Mode::Cw => 0.0,
        };

        if let Some(candidates) = &self.candidates {
            for detector in [Detector::D1, Detector::D2] {
                let n = candidates.sample(&mut rng) as u64;
                for _ in 0..n {
                    let t_ns = match (self.config.mode, envelope.kind()) {
                        (Mode::Cw, _) => rng.random_range(0.0..span_ns),
                        (Mode::Pulsed, EnvelopeKind::Square) => {
                            center_ns + envelope.t_p() * (rng.random::<f64>() - 0.5)
                        }
                        (Mode::Pulsed, EnvelopeKind::Gaussian) => {
                            let z: f64 = rng.sample(rand_distr::StandardNormal);
                            center_ns + envelope.gaussian_sigma() * z
                        }
                    };
                    let u: f64 = rng.random();
                    if !(0.0..span_ns).contains(&t_ns) {
                        continue;
                    }
                    // Relative phase drifts at the offset frequency; time measured from the pulse center.
                    let phase = phase0 + 2.0 * PI * dnu_mhz * (t_ns - center_ns) * 1e-3;
                    let accept = 2.0 * self.field.port_fractions(phase)[detector.index()];
                    if u * self.majorant < accept {
                        self.push(out, &mut rng, detector, start_ps, t_ns);
                    }
                }
            }
        }
        if let Some(dark) = &self.dark {
            for detector in [Detector::D1, Detector::D2] {
                let n = dark.sample(&mut rng) as u64;
                for _ in 0..n {
                    let t_ns = rng.random_range(0.0..span_ns);
                    self.push(out, &mut rng, detector, start_ps, t_ns);
                }
            }
        }
        out[first..].sort_unstable_by_key(|e| (e.time_ps, e.detector));
        for e in &mut out[first..] {
            e.frame_index = frame_index;
        }
    }

    fn push(
        &self,
        out: &mut Vec<DetectionEvent>,
        rng: &mut ChaCha8Rng,
        detector: Detector,
        start_ps: i64,
        t_ns: f64,
    ) {
        let mut offset = t_ns * 1e3;
        if let Some(j) = &self.jitter {
            offset += j.sample(rng);
            if !(0.0..self.span_ps as f64).contains(&offset) {
                return;
            }
        }
        let offset = (offset.round() as i64).clamp(0, self.span_ps - 1);
        out.push(DetectionEvent {
            detector,
            time_ps: start_ps + offset,
            frame_index: 0,
        });
    }
}
