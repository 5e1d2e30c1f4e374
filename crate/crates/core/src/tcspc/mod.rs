//! Time-difference coincidence histograms.
//!
//! Bins are centered on multiples of the bin width, so bin `k` covers
//! `[(k − ½)w, (k + ½)w)` picoseconds. The lag of a pair is always
//! `t(D1) − t(D2)`.

pub mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit;
use crate::model;
use crate::simulate::{Detector, EventStream, Mode, Polarization};

/// TCSPC resolving bin.
pub const DEFAULT_BIN_PS: u64 = 512;
/// Baseline fraction of the peak below which normalized bins are masked.
pub const MASK_FRACTION: f64 = 0.01;

const EVENTS_PER_TASK: usize = 1 << 16;

/// Acquisition context carried with a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub mode: Mode,
    pub polarization: Polarization,
    pub pulse_fwhm_ns: f64,
    pub frame_length_ns: f64,
    /// 1/e coherence time implied by the simulated noise, if known.
    pub coherence_time_ns: Option<f64>,
}

impl Acquisition {
    pub fn from_stream(stream: &EventStream) -> Self {
        let c = &stream.config;
        Self {
            mode: c.mode,
            polarization: c.polarization,
            pulse_fwhm_ns: c.envelope.t_p(),
            frame_length_ns: c.frame_span_ps() as f64 * 1e-3,
            coherence_time_ns: c.noise.coherence_time_ns(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: u64,
    /// Half-range, a multiple of the bin width.
    pub range_ps: u64,
    /// Counts for bins `−max_bin..=max_bin`.
    pub counts: Vec<u64>,
    pub total_pairs: u64,
    pub singles: [u64; 2],
    pub frames: u64,
    /// The requested range was not a multiple of the bin width and was rounded up.
    pub range_rounded: bool,
    pub acquisition: Acquisition,
}

impl CoincidenceHistogram {
    pub fn empty(
        bin_width_ps: u64,
        range_ps: u64,
        acquisition: Acquisition,
    ) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(Error::domain("bin width must be > 0"));
        }
        if range_ps < bin_width_ps {
            return Err(Error::domain(format!(
                "range {range_ps} ps is smaller than one bin ({bin_width_ps} ps)"
            )));
        }
        let n = range_ps.div_ceil(bin_width_ps);
        // Outermost bins whose upper edge would pass the range are dropped.
        let max_bin = n - 1;
        Ok(Self {
            bin_width_ps,
            range_ps: n * bin_width_ps,
            counts: vec![0; (2 * max_bin + 1) as usize],
            total_pairs: 0,
            singles: [0, 0],
            frames: 0,
            range_rounded: range_ps % bin_width_ps != 0,
            acquisition,
        })
    }

    pub fn max_bin(&self) -> i64 {
        (self.counts.len() / 2) as i64
    }

    pub fn bin_index(&self, lag_ps: i64) -> Option<usize> {
        let w = self.bin_width_ps as i64;
        let k = (2 * lag_ps + w).div_euclid(2 * w);
        let m = self.max_bin();
        (-m..=m).contains(&k).then(|| (k + m) as usize)
    }

    pub fn bin_center_ps(&self, index: usize) -> i64 {
        (index as i64 - self.max_bin()) * self.bin_width_ps as i64
    }

    pub fn centers_ns(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|i| self.bin_center_ps(i) as f64 * 1e-3)
            .collect()
    }

    pub fn same_binning(&self, other: &Self) -> bool {
        self.bin_width_ps == other.bin_width_ps && self.counts.len() == other.counts.len()
    }

    fn check_binning(&self, other: &Self) -> Result<()> {
        if !self.same_binning(other) {
            return Err(Error::Binning(format!(
                "{} ps × {} bins vs {} ps × {} bins",
                self.bin_width_ps,
                self.counts.len(),
                other.bin_width_ps,
                other.counts.len()
            )));
        }
        Ok(())
    }

    /// Adds another partial histogram of the same acquisition.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.check_binning(other)?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_pairs += other.total_pairs;
        self.singles[0] += other.singles[0];
        self.singles[1] += other.singles[1];
        self.frames += other.frames;
        self.range_rounded |= other.range_rounded;
        Ok(())
    }

    /// Returns a copy with `factor` adjacent bins summed (`factor` odd keeps the
    /// zero-centered grid; outer bins that do not fill a group are dropped).
    pub fn rebin(&self, factor: usize) -> Result<Self> {
        if factor == 0 || factor % 2 == 0 {
            return Err(Error::domain("rebin factor must be odd and > 0"));
        }
        let half = (factor / 2) as i64;
        let m = self.max_bin();
        let new_max = (m - half) / factor as i64;
        let mut counts = vec![0u64; (2 * new_max + 1) as usize];
        for (k, c) in counts.iter_mut().enumerate() {
            let center = (k as i64 - new_max) * factor as i64;
            for j in center - half..=center + half {
                *c += self.counts[(j + m) as usize];
            }
        }
        let width = self.bin_width_ps * factor as u64;
        Ok(Self {
            bin_width_ps: width,
            range_ps: (new_max as u64 + 1) * width,
            total_pairs: counts.iter().sum(),
            counts,
            singles: self.singles,
            frames: self.frames,
            range_rounded: self.range_rounded,
            acquisition: self.acquisition.clone(),
        })
    }
}

/// Builds the D1–D2 lag histogram of a stream.
///
/// Pulsed streams pair every D1 click with every D2 click of the same frame.
/// CW streams pair all clicks within the histogram range regardless of frame.
pub fn correlate(stream: &EventStream, bin_width_ps: u64, range_ps: u64) -> Result<CoincidenceHistogram> {
    if stream.events.is_empty() {
        return Err(Error::EmptyStream("no events to correlate".into()));
    }
    let acquisition = Acquisition::from_stream(stream);
    if acquisition.mode == Mode::Pulsed && (range_ps as f64) < 2e3 * acquisition.pulse_fwhm_ns {
        return Err(Error::domain(format!(
            "range {range_ps} ps must be at least twice the pulse FWHM ({} ns)",
            acquisition.pulse_fwhm_ns
        )));
    }
    let mut hist = CoincidenceHistogram::empty(bin_width_ps, range_ps, acquisition)?;
    hist.singles = stream.singles;
    hist.frames = stream.frame_count;
    let counts = match stream.config.mode {
        Mode::Pulsed => correlate_frames(&hist, &stream.events),
        Mode::Cw => correlate_sliding(&hist, &stream.events),
    };
    hist.total_pairs = counts.iter().sum();
    hist.counts = counts;
    Ok(hist)
}

fn add_counts(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

fn correlate_frames(hist: &CoincidenceHistogram, events: &[crate::simulate::DetectionEvent]) -> Vec<u64> {
    // Task boundaries fall on frame boundaries.
    let mut bounds = vec![0];
    let mut last = 0;
    for i in 1..events.len() {
        if events[i].frame_index != events[i - 1].frame_index && i - last >= EVENTS_PER_TASK {
            bounds.push(i);
            last = i;
        }
    }
    bounds.push(events.len());
    let len = hist.counts.len();
    bounds
        .par_windows(2)
        .fold(
            || vec![0u64; len],
            |mut acc, w| {
                let chunk = &events[w[0]..w[1]];
                let mut d1 = Vec::new();
                let mut d2 = Vec::new();
                for frame in chunk.chunk_by(|a, b| a.frame_index == b.frame_index) {
                    d1.clear();
                    d2.clear();
                    for e in frame {
                        match e.detector {
                            Detector::D1 => d1.push(e.time_ps),
                            Detector::D2 => d2.push(e.time_ps),
                        }
                    }
                    for &t1 in &d1 {
                        for &t2 in &d2 {
                            if let Some(k) = hist.bin_index(t1 - t2) {
                                acc[k] += 1;
                            }
                        }
                    }
                }
                acc
            },
        )
        .reduce(|| vec![0u64; len], add_counts)
}

fn correlate_sliding(hist: &CoincidenceHistogram, events: &[crate::simulate::DetectionEvent]) -> Vec<u64> {
    let d1: Vec<i64> = events.iter().filter(|e| e.detector == Detector::D1).map(|e| e.time_ps).collect();
    let mut d2: Vec<i64> = events.iter().filter(|e| e.detector == Detector::D2).map(|e| e.time_ps).collect();
    d2.sort_unstable();
    let reach = hist.range_ps as i64;
    let len = hist.counts.len();
    d1.par_chunks(EVENTS_PER_TASK)
        .fold(
            || vec![0u64; len],
            |mut acc, chunk| {
                for &t1 in chunk {
                    let lo = d2.partition_point(|&t| t < t1 - reach);
                    for &t2 in d2[lo..].iter().take_while(|&&t| t <= t1 + reach) {
                        if let Some(k) = hist.bin_index(t1 - t2) {
                            acc[k] += 1;
                        }
                    }
                }
                acc
            },
        )
        .reduce(|| vec![0u64; len], add_counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Divide by the smooth baseline fitted to an orthogonal-polarization reference.
    AgainstOrthogonal,
    /// Divide by the peak of a triangle fitted to the histogram itself.
    TrianglePeakFit,
    /// Divide by the mean level of the wings (|τ| > 3·t_c).
    WingLevel,
}

/// Dimensionless coincidence curve on the histogram's bin grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedHistogram {
    pub centers_ns: Vec<f64>,
    pub values: Vec<f64>,
    /// Raw counts behind each value (`value = counts · count_scale`), if any.
    pub counts: Option<Vec<u64>>,
    pub count_scale: f64,
    pub masked: Vec<bool>,
    pub mode: Option<NormalizationMode>,
    pub flags: Vec<String>,
}

impl NormalizedHistogram {
    /// Raw counts with unit scale, for fitting count histograms directly.
    pub fn raw(hist: &CoincidenceHistogram) -> Self {
        Self {
            centers_ns: hist.centers_ns(),
            values: hist.counts.iter().map(|&c| c as f64).collect(),
            counts: Some(hist.counts.clone()),
            count_scale: 1.0,
            masked: vec![false; hist.counts.len()],
            mode: None,
            flags: Vec::new(),
        }
    }

    /// A curve without count information; fits use unit weights.
    pub fn from_values(centers_ns: Vec<f64>, values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            centers_ns,
            values,
            counts: None,
            count_scale: 1.0,
            masked: vec![false; n],
            mode: None,
            flags: Vec::new(),
        }
    }

    /// Poisson standard deviation of each value (zero-count bins use variance 1).
    pub fn sigmas(&self) -> Vec<f64> {
        match &self.counts {
            Some(c) => c
                .iter()
                .map(|&c| self.count_scale * (c.max(1) as f64).sqrt())
                .collect(),
            None => vec![1.0; self.values.len()],
        }
    }

    pub fn to_curve(&self) -> DipCurve {
        DipCurve {
            lags_ns: self.centers_ns.clone(),
            values: self.values.clone(),
            sigmas: self.sigmas(),
            masked: self.masked.clone(),
            window_ns: None,
        }
    }

    /// Value of the unmasked bin nearest to `t_ns`.
    pub fn value_at(&self, t_ns: f64) -> Option<f64> {
        self.centers_ns
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.masked[*i])
            .min_by(|a, b| (a.1 - t_ns).abs().total_cmp(&(b.1 - t_ns).abs()))
            .map(|(i, _)| self.values[i])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NormalizeOptions {
    /// Overrides the wing threshold used by [`NormalizationMode::WingLevel`].
    pub wing_start_ns: Option<f64>,
}

pub fn normalize(
    target: &CoincidenceHistogram,
    reference: Option<&CoincidenceHistogram>,
    mode: NormalizationMode,
) -> Result<NormalizedHistogram> {
    normalize_with(target, reference, mode, &NormalizeOptions::default())
}

pub fn normalize_with(
    target: &CoincidenceHistogram,
    reference: Option<&CoincidenceHistogram>,
    mode: NormalizationMode,
    options: &NormalizeOptions,
) -> Result<NormalizedHistogram> {
    let centers = target.centers_ns();
    let mut flags = Vec::new();
    if target.frames == 0 {
        return Err(Error::domain("target histogram has zero frames"));
    }
    let mut masked = vec![false; centers.len()];
    let mask_outside = |t_p: f64, masked: &mut Vec<bool>| {
        for (m, &t) in masked.iter_mut().zip(&centers) {
            *m = model::triangle_corr(t, t_p).unwrap_or(0.0) < MASK_FRACTION;
        }
    };
    let count_scale = match mode {
        NormalizationMode::AgainstOrthogonal => {
            let reference = reference.ok_or_else(|| {
                Error::domain("against-orthogonal normalization needs a reference histogram")
            })?;
            target.check_binning(reference)?;
            if reference.frames == 0 {
                return Err(Error::domain("reference histogram has zero frames"));
            }
            let frame_scale = reference.frames as f64 / target.frames as f64;
            let baseline = match reference.acquisition.mode {
                Mode::Pulsed => {
                    let fit = fit::fit_triangle(&NormalizedHistogram::raw(reference))?;
                    if !fit.converged {
                        return Err(Error::FitInit(format!(
                            "reference triangle fit did not converge: {}",
                            fit.flags.join("; ")
                        )));
                    }
                    mask_outside(fit.get("t_p"), &mut masked);
                    fit.get("amplitude")
                }
                Mode::Cw => {
                    // A CW reference is flat; its level is the mean count.
                    reference.total_pairs as f64 / reference.counts.len() as f64
                }
            };
            if !(baseline > 0.0) {
                return Err(Error::FitInit("reference baseline is not positive".into()));
            }
            frame_scale / baseline
        }
        NormalizationMode::TrianglePeakFit => {
            let fit = fit::fit_triangle(&NormalizedHistogram::raw(target))?;
            if !fit.converged {
                return Err(Error::FitInit(format!(
                    "triangle fit did not converge: {}",
                    fit.flags.join("; ")
                )));
            }
            mask_outside(fit.get("t_p"), &mut masked);
            1.0 / fit.get("amplitude")
        }
        NormalizationMode::WingLevel => {
            let start = options
                .wing_start_ns
                .or(target.acquisition.coherence_time_ns.map(|t| 3.0 * t));
            let wings: Vec<u64> = match start {
                Some(s) => centers
                    .iter()
                    .zip(&target.counts)
                    .filter(|(t, _)| t.abs() > s)
                    .map(|(_, &c)| c)
                    .collect(),
                None => Vec::new(),
            };
            let wing_sum: u64 = wings.iter().sum();
            if wings.is_empty() || wing_sum == 0 {
                flags.push("wing level undefined; normalized to the global mean".to_owned());
                let mean = target.total_pairs as f64 / target.counts.len() as f64;
                if !(mean > 0.0) {
                    return Err(Error::domain("histogram is empty"));
                }
                1.0 / mean
            } else {
                wings.len() as f64 / wing_sum as f64
            }
        }
    };
    Ok(NormalizedHistogram {
        values: target.counts.iter().map(|&c| c as f64 * count_scale).collect(),
        centers_ns: centers,
        counts: Some(target.counts.clone()),
        count_scale,
        masked,
        mode: Some(mode),
        flags,
    })
}

/// Dip curve (lag → dimensionless) with per-point uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipCurve {
    pub lags_ns: Vec<f64>,
    pub values: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub masked: Vec<bool>,
    /// Coincidence window used for the reconstruction.
    pub window_ns: Option<f64>,
}

impl DipCurve {
    /// Unit-weight curve from bare samples.
    pub fn from_values(lags_ns: Vec<f64>, values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            lags_ns,
            values,
            sigmas: vec![1.0; n],
            masked: vec![false; n],
            window_ns: None,
        }
    }
}

/// Windowed ratio of parallel to orthogonal coincidences on the bin grid:
/// `D(t) = s · Σ_{|u−t| ≤ t_r/2} par(u) / Σ_{|u−t| ≤ t_r/2} orth(u)`
/// with `s` the orthogonal-to-parallel frame ratio.
pub fn reconstruct_dip(
    par: &CoincidenceHistogram,
    orth: &CoincidenceHistogram,
    t_r_ns: f64,
) -> Result<DipCurve> {
    par.check_binning(orth)?;
    let w = par.bin_width_ps as f64;
    if !(t_r_ns * 1e3 >= w) {
        return Err(Error::domain(format!(
            "window {t_r_ns} ns is narrower than one bin ({w} ps)"
        )));
    }
    if par.frames == 0 || orth.frames == 0 {
        return Err(Error::domain("histograms must record their frame counts"));
    }
    let scale = orth.frames as f64 / par.frames as f64;
    let half = (0.5 * t_r_ns * 1e3 / w + 1e-9).floor() as usize;
    let prefix = |c: &[u64]| {
        let mut p = vec![0u64; c.len() + 1];
        for (i, &x) in c.iter().enumerate() {
            p[i + 1] = p[i] + x;
        }
        p
    };
    let pp = prefix(&par.counts);
    let po = prefix(&orth.counts);
    let n = par.counts.len();
    let mut values = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut masked = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let p = (pp[hi] - pp[lo]) as f64;
        let o = (po[hi] - po[lo]) as f64;
        if o == 0.0 {
            values.push(0.0);
            sigmas.push(f64::INFINITY);
            masked.push(true);
            continue;
        }
        let d = scale * p / o;
        values.push(d);
        sigmas.push(scale * (p.max(1.0)).sqrt() / o * (1.0 + p / o).sqrt());
        masked.push(false);
    }
    Ok(DipCurve {
        lags_ns: par.centers_ns(),
        values,
        sigmas,
        masked,
        window_ns: Some(t_r_ns),
    })
}
