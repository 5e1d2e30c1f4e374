//! Weighted least-squares fits of the triangle, fringe and dip models, and the
//! integrated visibility estimator.
//!
//! Histogram fits use Poisson weights. The first pass takes the variance from
//! the observed counts, the second from the model's expected counts at the first
//! optimum. Empty bins get variance 1; those where the model is exactly zero
//! are left out of the degrees of freedom. Standard errors come from the
//! inverse normal matrix and are inflated by `√(χ²/dof)` when that ratio
//! exceeds 1.

pub mod lm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, WidthConversion};
use crate::tcspc::{CoincidenceHistogram, DipCurve, NormalizedHistogram};
use lm::{CurveModel, LmOptions, LmOutcome, Problem};

/// Fewest unmasked points accepted by any fit.
pub const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    Triangle,
    Fringe,
    Dip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub value: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub params: BTreeMap<String, f64>,
    /// Present only for converged fits; parameters that were held fixed or
    /// turned out unidentifiable are absent.
    pub std_errors: Option<BTreeMap<String, f64>>,
    /// Scaled covariance over `covariance_params`.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub covariance_params: Vec<String>,
    pub fixed: Vec<String>,
    pub chi2: f64,
    pub dof: usize,
    pub converged: bool,
    pub iterations: usize,
    pub points: usize,
    /// Wald–Wolfowitz runs test on the residual signs.
    pub runs_p_value: f64,
    pub derived: BTreeMap<String, Derived>,
    pub flags: Vec<String>,
    pub input_digest: Option<String>,
}

impl FitResult {
    /// Parameter value by name; NaN if absent.
    pub fn get(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.std_errors.as_ref()?.get(name).copied()
    }

    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof as f64
    }
}

/// Weighted points fed to the optimizer.
struct Data {
    x: Vec<f64>,
    y: Vec<f64>,
    sigma: Vec<f64>,
    /// Scale from counts to values, when the values are scaled Poisson counts.
    count_scale: Option<f64>,
}

impl Data {
    fn from_hist(h: &NormalizedHistogram) -> Result<Self> {
        if h.values.len() != h.centers_ns.len() || h.masked.len() != h.values.len() {
            return Err(Error::domain("histogram arrays differ in length"));
        }
        let sig = h.sigmas();
        let keep: Vec<usize> = (0..h.values.len()).filter(|&i| !h.masked[i]).collect();
        Self::check_points(keep.len())?;
        Ok(Self {
            x: keep.iter().map(|&i| h.centers_ns[i]).collect(),
            y: keep.iter().map(|&i| h.values[i]).collect(),
            sigma: keep.iter().map(|&i| sig[i]).collect(),
            count_scale: h.counts.as_ref().map(|_| h.count_scale),
        })
    }

    fn from_curve(c: &DipCurve) -> Result<Self> {
        let n = c.values.len();
        if c.lags_ns.len() != n || c.sigmas.len() != n || c.masked.len() != n {
            return Err(Error::domain("curve arrays differ in length"));
        }
        let keep: Vec<usize> = (0..n)
            .filter(|&i| !c.masked[i] && c.sigmas[i].is_finite() && c.sigmas[i] > 0.0)
            .collect();
        Self::check_points(keep.len())?;
        Ok(Self {
            x: keep.iter().map(|&i| c.lags_ns[i]).collect(),
            y: keep.iter().map(|&i| c.values[i]).collect(),
            sigma: keep.iter().map(|&i| c.sigmas[i]).collect(),
            count_scale: None,
        })
    }

    fn check_points(n: usize) -> Result<()> {
        if n < MIN_POINTS {
            return Err(Error::domain(format!(
                "{n} usable points; at least {MIN_POINTS} are required"
            )));
        }
        Ok(())
    }

    fn max_abs_x(&self) -> f64 {
        self.x.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Mean of the values at the points nearest to `t`.
    fn near(&self, t: f64, k: usize) -> f64 {
        let mut idx: Vec<usize> = (0..self.x.len()).collect();
        idx.sort_by(|&a, &b| (self.x[a] - t).abs().total_cmp(&(self.x[b] - t).abs()));
        let k = k.min(idx.len()).max(1);
        idx[..k].iter().map(|&i| self.y[i]).sum::<f64>() / k as f64
    }

    /// Values averaged over ±|t| pairs, sorted by |t|.
    fn folded(&self) -> Vec<(f64, f64)> {
        let mut by_abs: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
        for (&x, &y) in self.x.iter().zip(&self.y) {
            // lags on a bin grid fold onto the same key
            let key = (x.abs() * 1e6).round() as i64;
            let e = by_abs.entry(key).or_insert((x.abs(), 0.0, 0));
            e.1 += y;
            e.2 += 1;
        }
        by_abs.into_values().map(|(t, s, n)| (t, s / n as f64)).collect()
    }
}

struct Triangle;

impl CurveModel for Triangle {
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (1.0 - x.abs() / p[1]).max(0.0)
    }
    fn grad(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let inside = x.abs() < p[1];
        out[0] = (1.0 - x.abs() / p[1]).max(0.0);
        out[1] = if inside { p[0] * x.abs() / (p[1] * p[1]) } else { 0.0 };
    }
}

/// `[amplitude, t_p, t_c, v_m]`
struct Fringe;

impl CurveModel for Fringe {
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let tri = (1.0 - x.abs() / p[1]).max(0.0);
        p[0] * tri * (1.0 - p[3] * model::coherence_factor(x, p[2]))
    }
    fn grad(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let (a, t_p, t_c, v) = (p[0], p[1], p[2], p[3]);
        let tri = (1.0 - x.abs() / t_p).max(0.0);
        let g = model::coherence_factor(x, t_c);
        let dip = 1.0 - v * g;
        out[0] = tri * dip;
        out[1] = if x.abs() < t_p { a * x.abs() / (t_p * t_p) * dip } else { 0.0 };
        out[2] = -a * tri * v * g * 2.0 * x * x / (t_c * t_c * t_c);
        out[3] = -a * tri * g;
    }
}

/// `[n_inf, v, width]`, width either the 1/e time or the FWHM.
struct Dip {
    /// t_c = width / divisor
    divisor: f64,
}

impl CurveModel for Dip {
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (1.0 - p[1] * model::coherence_factor(x, p[2] / self.divisor))
    }
    fn grad(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let t_c = p[2] / self.divisor;
        let g = model::coherence_factor(x, t_c);
        out[0] = 1.0 - p[1] * g;
        out[1] = -p[0] * g;
        out[2] = -p[0] * p[1] * g * 2.0 * x * x / (t_c * t_c * t_c) / self.divisor;
    }
}

struct Spec<'a, M: CurveModel> {
    kind: FitModel,
    model: &'a M,
    names: &'a [&'a str],
    init: Vec<f64>,
    free: Vec<bool>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

struct Solved {
    outcome: LmOutcome,
    sigma: Vec<f64>,
}

fn solve<M: CurveModel>(data: &Data, spec: &Spec<M>) -> Result<Solved> {
    let opts = LmOptions::default();
    let mut sigma = data.sigma.clone();
    let run = |sigma: &[f64], init: &[f64]| {
        Problem {
            model: spec.model,
            x: &data.x,
            y: &data.y,
            sigma,
            free: &spec.free,
            lower: &spec.lower,
            upper: &spec.upper,
        }
        .solve(init, &opts)
    };
    let mut outcome = run(&sigma, &spec.init);
    if let Some(scale) = data.count_scale {
        // Second pass with the expected counts of the first optimum.
        if outcome.converged {
            sigma = data
                .x
                .iter()
                .map(|&x| {
                    let expected = spec.model.eval(x, &outcome.params) / scale;
                    scale * expected.max(1.0).sqrt()
                })
                .collect();
            outcome = run(&sigma, &outcome.params);
        }
    }
    if !outcome.converged {
        return Err(Error::FitNonConvergence {
            iterations: outcome.iterations,
            chi2: outcome.chi2,
            last: outcome.params,
            reason: outcome.reason.to_owned(),
        });
    }
    Ok(Solved { outcome, sigma })
}

fn residuals<M: CurveModel>(data: &Data, model: &M, p: &[f64]) -> Vec<f64> {
    data.x
        .iter()
        .zip(&data.y)
        .map(|(&x, &y)| y - model.eval(x, p))
        .collect()
}

/// Assembles the result. `cov_free` selects the parameters whose covariance is
/// reported, `tolerated_bounds` those allowed to sit on a bound.
fn finish<M: CurveModel>(
    data: &Data,
    spec: &Spec<M>,
    solved: &Solved,
    cov_free: &[bool],
    tolerated_bounds: &[usize],
    mut flags: Vec<String>,
) -> Result<FitResult> {
    let out = &solved.outcome;
    let n_free = spec.free.iter().filter(|&&f| f).count();
    // An empty bin where the model is exactly zero constrains nothing.
    let points = data
        .x
        .iter()
        .zip(&data.y)
        .filter(|(&x, &y)| !(y == 0.0 && spec.model.eval(x, &out.params) == 0.0))
        .count();
    if points <= n_free {
        return Err(Error::domain(format!(
            "{points} points leave no degrees of freedom for {n_free} parameters"
        )));
    }
    let dof = points - n_free;
    let mut converged = out.converged;
    for &j in &out.at_bound {
        if !tolerated_bounds.contains(&j) {
            converged = false;
            flags.push(format!("{} ended on its bound", spec.names[j]));
        }
    }
    let params: BTreeMap<String, f64> = spec
        .names
        .iter()
        .zip(&out.params)
        .map(|(n, &v)| (n.to_string(), v))
        .collect();
    let fixed = spec
        .names
        .iter()
        .zip(&spec.free)
        .filter(|(_, &f)| !f)
        .map(|(n, _)| n.to_string())
        .collect();
    let cov_names: Vec<String> = spec
        .names
        .iter()
        .zip(cov_free)
        .filter(|(_, &f)| f)
        .map(|(n, _)| n.to_string())
        .collect();
    let inflation = (out.chi2 / dof as f64).max(1.0);
    let problem = Problem {
        model: spec.model,
        x: &data.x,
        y: &data.y,
        sigma: &solved.sigma,
        free: &spec.free,
        lower: &spec.lower,
        upper: &spec.upper,
    };
    let covariance = problem
        .covariance_at(&out.params, cov_free)
        .map(|c| c * inflation);
    if covariance.is_none() {
        flags.push("normal matrix is singular; no standard errors".to_owned());
    }
    let std_errors = match (&covariance, converged) {
        (Some(c), true) => Some(
            cov_names
                .iter()
                .enumerate()
                .map(|(k, n)| (n.clone(), c[(k, k)].sqrt()))
                .collect(),
        ),
        _ => None,
    };
    let res = residuals(data, spec.model, &out.params);
    Ok(FitResult {
        model: spec.kind,
        params,
        std_errors,
        covariance: covariance.map(|c| {
            (0..c.nrows())
                .map(|i| (0..c.ncols()).map(|j| c[(i, j)]).collect())
                .collect()
        }),
        covariance_params: cov_names,
        fixed,
        chi2: out.chi2,
        dof,
        converged,
        iterations: out.iterations,
        points,
        runs_p_value: runs_test(&res),
        derived: BTreeMap::new(),
        flags,
        input_digest: None,
    })
}

fn moment_t_p(data: &Data) -> f64 {
    let (mut s0, mut s2) = (0.0, 0.0);
    for (&x, &y) in data.x.iter().zip(&data.y) {
        let y = y.max(0.0);
        s0 += y;
        s2 += y * x * x;
    }
    // A unit triangle of half-width t_p has variance t_p²/6.
    (6.0 * s2 / s0).sqrt()
}

fn bin_spacing(data: &Data) -> f64 {
    let mut xs = data.x.clone();
    xs.sort_by(f64::total_cmp);
    xs.windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Fits `amplitude·max(0, 1 − |t|/t_p)`.
///
/// `t_p` is bounded by twice the largest lag; a fit that ends there (for
/// instance on flat input) is returned with `converged = false`.
pub fn fit_triangle(hist: &NormalizedHistogram) -> Result<FitResult> {
    let data = Data::from_hist(hist)?;
    let t_max = data.max_abs_x();
    let t_p0 = moment_t_p(&data);
    if !(t_p0.is_finite() && t_p0 > 0.0) {
        return Err(Error::FitInit("histogram has no positive mass".into()));
    }
    let t_p0 = t_p0.min(2.0 * t_max);
    let dx = bin_spacing(&data);
    let area: f64 = data.y.iter().map(|y| y.max(0.0)).sum::<f64>() * dx;
    let spec = Spec {
        kind: FitModel::Triangle,
        model: &Triangle,
        names: &["amplitude", "t_p"],
        init: vec![area / t_p0, t_p0],
        free: vec![true, true],
        lower: vec![0.0, 0.5 * dx.min(t_max)],
        upper: vec![f64::INFINITY, 2.0 * t_max],
    };
    let solved = solve(&data, &spec)?;
    finish(&data, &spec, &solved, &spec.free, &[], Vec::new())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FringeFitOptions {
    /// Holds `t_p` at this value (ns).
    pub fixed_t_p: Option<f64>,
    /// Holds the amplitude at this value. By default the amplitude is fixed
    /// at 1 for normalized histograms and free for raw counts.
    pub fixed_amplitude: Option<f64>,
}

/// Fits `amplitude·max(0, 1 − |t|/t_p)·[1 − v_m·exp(−t²/t_c²)]`.
pub fn fit_fringe(hist: &NormalizedHistogram, fixed_t_p: Option<f64>) -> Result<FitResult> {
    fit_fringe_with(
        hist,
        &FringeFitOptions {
            fixed_t_p,
            ..FringeFitOptions::default()
        },
    )
}

pub fn fit_fringe_with(hist: &NormalizedHistogram, options: &FringeFitOptions) -> Result<FitResult> {
    let data = Data::from_hist(hist)?;
    let t_max = data.max_abs_x();
    let dx = bin_spacing(&data);
    let mut flags = Vec::new();
    if let Some(t_p) = options.fixed_t_p {
        if !(t_p > 0.0) {
            return Err(Error::domain(format!("fixed t_p must be > 0, got {t_p}")));
        }
    }
    let amplitude_fixed = options
        .fixed_amplitude
        .or(hist.mode.map(|_| 1.0));

    let (a0, t_p0) = match (amplitude_fixed, options.fixed_t_p) {
        (Some(a), Some(t)) => (a, t),
        (a, t) => {
            // A plain triangle through the fringe seeds whatever is free.
            let tri = fit_triangle(hist).ok().filter(|f| f.get("t_p").is_finite());
            let t_guess = tri.as_ref().map_or_else(|| moment_t_p(&data), |f| f.get("t_p"));
            let t_p = t.unwrap_or(t_guess.min(2.0 * t_max));
            let a = a.unwrap_or_else(|| {
                // the wings of the triangle are least affected by the dip
                data.x
                    .iter()
                    .zip(&data.y)
                    .filter_map(|(&x, &y)| {
                        let tri = 1.0 - x.abs() / t_p;
                        (tri > 0.2).then_some(y / tri)
                    })
                    .fold(0.0, f64::max)
                    .max(f64::MIN_POSITIVE)
            });
            (a, t_p)
        }
    };

    let mut v0 = 1.0 - data.near(0.0, 3) / a0;
    if !(0.0..=0.6).contains(&v0) || !v0.is_finite() {
        flags.push(format!("initial v_m estimate {v0:.4} clamped to [0, 0.6]"));
        v0 = if v0.is_finite() { v0.clamp(0.0, 0.6) } else { 0.0 };
    }
    let target = 1.0 - v0 / std::f64::consts::E;
    let t_c0 = data
        .folded()
        .into_iter()
        .filter(|(t, _)| *t > 0.0 && 1.0 - t / t_p0 > 0.05)
        .find(|&(t, y)| y / (a0 * (1.0 - t / t_p0)) >= target)
        .map_or(0.5 * t_p0, |(t, _)| t.max(dx));

    let free = vec![amplitude_fixed.is_none(), options.fixed_t_p.is_none(), true, true];
    let spec = Spec {
        kind: FitModel::Fringe,
        model: &Fringe,
        names: &["amplitude", "t_p", "t_c", "v_m"],
        init: vec![amplitude_fixed.unwrap_or(a0), t_p0, t_c0, v0],
        free: free.clone(),
        lower: vec![0.0, 0.5 * dx.min(t_max), 0.05 * dx.min(t_max), -1.0],
        upper: vec![f64::INFINITY, 2.0 * t_max, 1e3 * t_max, 1.0],
    };
    let solved = solve(&data, &spec)?;
    let mut result = finish(&data, &spec, &solved, &free, &[], flags.clone())?;

    let v = result.get("v_m");
    let significant = result.std_error("v_m").is_some_and(|se| v.abs() >= 2.0 * se);
    if !significant {
        // Without a fringe the width has no handle on the data; report the
        // remaining parameters with t_c held at its fitted value.
        let mut cov_free = free;
        cov_free[2] = false;
        flags.push("v_m is not significant; t_c is unidentifiable".to_owned());
        result = finish(&data, &spec, &solved, &cov_free, &[2], flags)?;
    }
    let t_c = result.get("t_c");
    let se = result.std_error("t_c");
    result.derived.insert(
        "fwhm".into(),
        Derived {
            value: model::fwhm_factor() * t_c,
            std_error: se.map(|s| model::fwhm_factor() * s),
        },
    );
    result.derived.insert(
        "mu".into(),
        Derived {
            value: t_c / result.get("t_p"),
            std_error: None,
        },
    );
    Ok(result)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DipWidth {
    /// Fit the 1/e half-width `t_c`.
    #[default]
    OneOverE,
    /// Fit the full width at half depth.
    Fwhm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DipFitOptions {
    /// Holds the baseline at this value. The wing requirement is then waived.
    pub fixed_n_inf: Option<f64>,
    pub width: DipWidth,
}

/// Fits `n_inf·[1 − v·exp(−t²/t_c²)]` and reports the FWHM `2√ln2·t_c`.
pub fn fit_dip(curve: &DipCurve, options: &DipFitOptions) -> Result<FitResult> {
    let data = Data::from_curve(curve)?;
    let dx = bin_spacing(&data);
    let t_max = data.max_abs_x();
    let folded = data.folded();
    let outer = |from: f64| {
        let w: Vec<f64> = folded.iter().filter(|(t, _)| *t >= from).map(|p| p.1).collect();
        (w.iter().sum::<f64>() / w.len() as f64, w.len())
    };
    let mut n0 = options.fixed_n_inf.unwrap_or_else(|| outer(0.8 * t_max).0);
    let v0 = (1.0 - data.near(0.0, 3) / n0).clamp(-1.0, 1.0);
    let target = n0 * (1.0 - v0 / std::f64::consts::E);
    let recovered = |y: f64| if v0 >= 0.0 { y >= target } else { y <= target };
    let t_c0 = folded
        .iter()
        .find(|(t, y)| *t > 0.0 && recovered(*y))
        .map_or(0.5 * t_max, |(t, _)| t.max(dx));
    if options.fixed_n_inf.is_none() {
        let (wing_mean, wing_points) = outer(2.0 * t_c0);
        if wing_points < 3 {
            return Err(Error::FitInit(format!(
                "the dip has no wings beyond 2·t_c ≈ {:.1} ns; use a larger range or fix n_inf",
                2.0 * t_c0
            )));
        }
        n0 = wing_mean;
    }
    let divisor = match options.width {
        DipWidth::OneOverE => 1.0,
        DipWidth::Fwhm => model::fwhm_factor(),
    };
    let width_name = match options.width {
        DipWidth::OneOverE => "t_c",
        DipWidth::Fwhm => "fwhm",
    };
    let names = ["n_inf", "v", width_name];
    let free = vec![options.fixed_n_inf.is_none(), true, true];
    let dip = Dip { divisor };
    let spec = Spec {
        kind: FitModel::Dip,
        model: &dip,
        names: &names,
        init: vec![n0, v0, t_c0 * divisor],
        free: free.clone(),
        lower: vec![0.0, -1.0, 0.05 * dx.min(t_max) * divisor],
        upper: vec![f64::INFINITY, 1.0, 1e3 * t_max * divisor],
    };
    let solved = solve(&data, &spec)?;
    let mut result = finish(&data, &spec, &solved, &free, &[], Vec::new())?;
    let w = result.get(width_name);
    let se = result.std_error(width_name);
    let (other, factor) = match options.width {
        DipWidth::OneOverE => ("fwhm", model::fwhm_factor()),
        DipWidth::Fwhm => ("t_c", 1.0 / model::fwhm_factor()),
    };
    result.derived.insert(
        other.into(),
        Derived {
            value: w * factor,
            std_error: se.map(|s| s * factor),
        },
    );
    Ok(result)
}

/// `t_c` of a dip fit regardless of its width parameterization.
pub fn dip_tc(fit: &FitResult) -> f64 {
    fit.params
        .get("t_c")
        .copied()
        .or_else(|| fit.derived.get("t_c").map(|d| d.value))
        .unwrap_or_else(|| {
            model::tc_fwhm_convert(fit.get("fwhm"), WidthConversion::FromFwhm).unwrap_or(f64::NAN)
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityEstimate {
    pub value: f64,
    pub std_error: f64,
    pub bound_ns: f64,
    /// Parallel and orthogonal sums inside the bound, after wing subtraction.
    pub par_sum: f64,
    pub orth_sum: f64,
    /// Orthogonal-to-parallel frame ratio applied to the parallel sum.
    pub scale: f64,
    pub wing_subtracted: bool,
}

/// `V̂ = 1 − scale·Σ_{|t|≤bound} par / Σ_{|t|≤bound} orth`.
///
/// With `wing_subtract`, the mean count per bin beyond the pulse width is
/// removed from every bin before summing.
pub fn estimate_visibility_integrated(
    par: &CoincidenceHistogram,
    orth: &CoincidenceHistogram,
    bound_ns: f64,
    wing_subtract: bool,
) -> Result<VisibilityEstimate> {
    if !par.same_binning(orth) {
        return Err(Error::Binning("parallel and orthogonal histograms differ".into()));
    }
    if !(bound_ns > 0.0) || bound_ns * 1e3 > par.range_ps as f64 {
        return Err(Error::domain(format!(
            "bound {bound_ns} ns must lie in (0, {} ns]",
            par.range_ps as f64 * 1e-3
        )));
    }
    if par.frames == 0 || orth.frames == 0 {
        return Err(Error::domain("histograms must record their frame counts"));
    }
    let scale = orth.frames as f64 / par.frames as f64;
    let centers = par.centers_ns();
    let inside: Vec<usize> = (0..centers.len())
        .filter(|&i| centers[i].abs() <= bound_ns + 1e-9)
        .collect();
    // (sum, variance) inside the bound
    let sum = |h: &CoincidenceHistogram| -> (f64, f64) {
        let s: f64 = inside.iter().map(|&i| h.counts[i] as f64).sum();
        if !wing_subtract {
            return (s, s);
        }
        let t_p = h.acquisition.pulse_fwhm_ns;
        let wings: Vec<f64> = (0..centers.len())
            .filter(|&i| centers[i].abs() > t_p)
            .map(|i| h.counts[i] as f64)
            .collect();
        if wings.is_empty() {
            return (s, s);
        }
        let nw = wings.len() as f64;
        let level = wings.iter().sum::<f64>() / nw;
        let k = inside.len() as f64;
        (s - k * level, s + k * k * level / nw)
    };
    let (p, vp) = sum(par);
    let (o, vo) = sum(orth);
    if !(o > 0.0) {
        return Err(Error::domain("orthogonal sum inside the bound is zero"));
    }
    let r = scale * p / o;
    let var = (scale / o).powi(2) * vp + (r / o).powi(2) * vo;
    Ok(VisibilityEstimate {
        value: 1.0 - r,
        std_error: var.sqrt(),
        bound_ns,
        par_sum: p,
        orth_sum: o,
        scale,
        wing_subtracted: wing_subtract,
    })
}

/// Two-sided p-value of the Wald–Wolfowitz runs test on residual signs
/// (normal approximation; zero residuals are skipped).
pub fn runs_test(residuals: &[f64]) -> f64 {
    let signs: Vec<bool> = residuals.iter().filter(|r| **r != 0.0).map(|r| *r > 0.0).collect();
    let n1 = signs.iter().filter(|&&s| s).count() as f64;
    let n2 = signs.len() as f64 - n1;
    if n1 == 0.0 || n2 == 0.0 {
        return if signs.len() < 2 { 1.0 } else { 0.0 };
    }
    let runs = 1 + signs.windows(2).filter(|w| w[0] != w[1]).count();
    let n = n1 + n2;
    let mean = 2.0 * n1 * n2 / n + 1.0;
    let var = 2.0 * n1 * n2 * (2.0 * n1 * n2 - n) / (n * n * (n - 1.0));
    if !(var > 0.0) {
        return 1.0;
    }
    let z = (runs as f64 - mean) / var.sqrt();
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}
