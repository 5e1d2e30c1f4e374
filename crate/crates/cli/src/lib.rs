//! `tpi`: simulate, correlate, normalize and fit time-resolved two-photon
//! interference data.
//!
//! Every subcommand is also callable in-process through [`run`]. Exit codes:
//! 0 success, 2 invalid input, 3 I/O failure, 4 numeric failure.

pub mod output;
pub mod sweep;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tpi_core::fit::{self, DipFitOptions, DipWidth, FitResult, FringeFitOptions};
use tpi_core::model::{self, RatioMu, WidthConversion};
use tpi_core::simulate::format::{self, FormatError};
use tpi_core::simulate::{Mode, SimConfig, Simulator};
use tpi_core::tcspc::{self, io as tio, CoincidenceHistogram, DipCurve, NormalizationMode, NormalizedHistogram};

use output::{open, sibling, write_atomic, RunManifest};

/// Environment variable read for the default worker count.
pub const WORKERS_ENV: &str = "TPI_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<tpi_core::Error> for CliError {
    fn from(e: tpi_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

fn format_error(path: &Path, e: FormatError) -> CliError {
    match e {
        FormatError::Io(source) if source.kind() == std::io::ErrorKind::InvalidData => {
            CliError::Validation(format!("{}: {source}", path.display()))
        }
        FormatError::Io(source) if source.kind() == std::io::ErrorKind::UnexpectedEof => {
            CliError::Validation(format!("{}: truncated file", path.display()))
        }
        FormatError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        FormatError::Invalid(e) => {
            let mapped = CliError::from(e);
            match mapped {
                CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
                other => other,
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tpi", version, about = "Time-resolved two-photon interference of weak coherent pulses")]
pub struct Cli {
    /// Worker threads for simulation and correlation; all cores when unset.
    /// Results do not depend on this value.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate detector clicks and write an event stream.
    Simulate(SimulateArgs),
    /// Build the D1−D2 coincidence histogram of an event stream.
    Correlate(CorrelateArgs),
    /// Normalize a histogram into a dimensionless coincidence curve.
    Normalize(NormalizeArgs),
    /// Fit the triangle, fringe or dip model.
    Fit(FitArgs),
    /// Evaluate the integrated visibility law.
    Visibility(VisibilityArgs),
    /// Tabulate visibility against the coherence ratio, analytically or by Monte Carlo.
    Sweep(sweep::SweepArgs),
    /// Reconstruct a conventional dip by bounding the coincidence window.
    ReconstructDip(ReconstructDipArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamFormat {
    Text,
    Binary,
}

#[derive(Debug, Args)]
#[command(after_help = "\
Without --config the reference setup is simulated: pulsed square pulses with \
t_p = 100 ns at a 2 MHz repetition rate, 0.1 photons per pulse over both detectors, \
parallel polarization, no frequency noise, 10^6 frames, seed 0. Histograms \
of the stream use 512 ps bins by default.")]
pub struct SimulateArgs {
    /// Flat `key = value` config file (units in key names).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of frames.
    #[arg(long)]
    pub frames: Option<u64>,
    #[arg(long, value_enum, default_value_t = StreamFormat::Text)]
    pub format: StreamFormat,
    /// Event-stream output; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Event stream (text or binary).
    pub stream: PathBuf,
    /// TCSPC bin width in ps.
    #[arg(long, default_value_t = tcspc::DEFAULT_BIN_PS)]
    pub bin_ps: u64,
    /// Half-range of the lag axis in ns; rounded up to whole bins.
    #[arg(long, default_value_t = 200.0)]
    pub range_ns: f64,
    /// Histogram CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationChoice {
    None,
    AgainstOrthogonal,
    TrianglePeakFit,
    WingLevel,
}

impl NormalizationChoice {
    fn mode(self) -> Option<NormalizationMode> {
        match self {
            Self::None => None,
            Self::AgainstOrthogonal => Some(NormalizationMode::AgainstOrthogonal),
            Self::TrianglePeakFit => Some(NormalizationMode::TrianglePeakFit),
            Self::WingLevel => Some(NormalizationMode::WingLevel),
        }
    }
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Target histogram CSV.
    pub target: PathBuf,
    /// Orthogonal-polarization reference histogram CSV.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Defaults to against-orthogonal with a reference, otherwise
    /// triangle-peak-fit for pulsed and wing-level for CW data.
    #[arg(long, value_enum)]
    pub mode: Option<NormalizationChoice>,
    /// Wing threshold for wing-level normalization (default 3·t_c).
    #[arg(long)]
    pub wing_start_ns: Option<f64>,
    /// `lag_ns,value` CSV output; masks and metadata go to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModelChoice {
    Triangle,
    Fringe,
    Dip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WidthChoice {
    OneOverE,
    Fwhm,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Histogram CSV (triangle, fringe) or `lag_ns,value` curve CSV (dip).
    /// A curve's `<input>.json` sidecar, if present, supplies its errors and mask.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub model: FitModelChoice,
    /// Orthogonal reference histogram for normalization.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Histogram normalization before fitting; defaults to against-orthogonal
    /// with a reference, otherwise raw counts.
    #[arg(long, value_enum)]
    pub normalization: Option<NormalizationChoice>,
    /// Hold t_p (ns) fixed in fringe fits.
    #[arg(long)]
    pub fixed_tp: Option<f64>,
    /// Hold t_p at the triangle fit of the reference.
    #[arg(long, conflicts_with = "fixed_tp", requires = "reference")]
    pub tp_from_reference: bool,
    /// Hold the dip baseline fixed (waives the wing requirement).
    #[arg(long)]
    pub fixed_n_inf: Option<f64>,
    /// Width parameter of dip fits.
    #[arg(long, value_enum, default_value_t = WidthChoice::OneOverE)]
    pub width: WidthChoice,
    /// FitResult JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VisibilityMethod {
    Closed,
    Quadrature,
    GaussianPulse,
}

#[derive(Debug, Args)]
pub struct VisibilityArgs {
    /// Coherence ratio μ = t_c/t_p.
    #[arg(long, conflicts_with_all = ["tc", "tr"])]
    pub mu: Option<f64>,
    /// Coherence time t_c in ns (1/e half-width unless --tc-fwhm).
    #[arg(long)]
    pub tc: Option<f64>,
    /// Treat --tc as a FWHM and convert with 2√ln2.
    #[arg(long, requires = "tc")]
    pub tc_fwhm: bool,
    /// Pulse duration t_p in ns.
    #[arg(long, default_value_t = 100.0)]
    pub tp: f64,
    /// Maximum visibility v_m (≤ 0.5).
    #[arg(long, default_value_t = 0.5)]
    pub vm: f64,
    /// Coincidence window T_R in ns; replaces t_p by T_R/2 (typically 10).
    #[arg(long, requires = "tc")]
    pub tr: Option<f64>,
    #[arg(long, value_enum, default_value_t = VisibilityMethod::Closed)]
    pub method: VisibilityMethod,
    /// Print JSON instead of a plain line.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON record to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructDipArgs {
    /// Parallel-polarization histogram CSV.
    pub parallel: PathBuf,
    /// Orthogonal-polarization histogram CSV.
    pub orthogonal: PathBuf,
    /// Coincidence window T_R in ns.
    #[arg(long, default_value_t = 10.0)]
    pub tr_ns: f64,
    /// Fit the dip model and write `<out>.fit.json`.
    #[arg(long)]
    pub fit: bool,
    /// Hold the dip baseline fixed in the fit.
    #[arg(long, requires = "fit")]
    pub fixed_n_inf: Option<f64>,
    /// `lag_ns,value` CSV output; errors and mask go to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::validation(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::validation("--workers must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::validation(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Correlate(a) => correlate(&a),
        Command::Normalize(a) => normalize(&a),
        Command::Fit(a) => fit_cmd(&a),
        Command::Visibility(a) => visibility(&a),
        Command::Sweep(a) => sweep::sweep(&a),
        Command::ReconstructDip(a) => reconstruct_dip(&a),
    })
}

pub fn load_config(path: Option<&Path>) -> Result<SimConfig, CliError> {
    let Some(path) = path else {
        return Ok(SimConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SimConfig::from_kv_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut config = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(f) = a.frames {
        config.num_frames = f;
    }
    config.validate()?;
    let mut manifest = RunManifest::new("simulate");
    manifest.config_path = a.config.clone();
    manifest.config = Some(config.clone());
    manifest.seed = Some(config.seed);
    manifest.param("format", format!("{:?}", a.format).to_lowercase());
    let digest = manifest.seal();

    let stream = Simulator::new(config)?.run()?;
    let mut meta = format::Metadata::new();
    meta.insert("manifest_digest".into(), digest);
    meta.insert("tool_version".into(), output::TOOL_VERSION.into());
    write_atomic(&a.out, |w| match a.format {
        StreamFormat::Text => format::write_text(w, &stream, &meta),
        StreamFormat::Binary => format::write_binary(w, &stream, &meta),
    })?;
    eprintln!(
        "simulated {} frames: {} D1 and {} D2 clicks",
        stream.frame_count, stream.singles[0], stream.singles[1]
    );
    manifest.finish(started.elapsed(), vec![a.out.clone()], &sibling(&a.out, "manifest.json"))
}

pub fn read_stream(path: &Path) -> Result<tpi_core::EventStream, CliError> {
    format::read_any(open(path)?)
        .map(|(s, _)| s)
        .map_err(|e| format_error(path, e))
}

pub fn read_histogram(path: &Path) -> Result<CoincidenceHistogram, CliError> {
    tio::read_histogram(open(path)?)
        .map(|(h, _)| h)
        .map_err(|e| format_error(path, e))
}

fn write_hist(path: &Path, h: &CoincidenceHistogram, digest: &str) -> Result<(), CliError> {
    let mut meta = tio::Metadata::new();
    meta.insert("manifest_digest".into(), digest.to_owned());
    write_atomic(path, |w| tio::write_histogram(w, h, &meta))
}

fn correlate(a: &CorrelateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    if !(a.range_ns > 0.0) || !a.range_ns.is_finite() {
        return Err(CliError::validation(format!("--range-ns must be > 0, got {}", a.range_ns)));
    }
    let mut manifest = RunManifest::new("correlate");
    manifest.input(&a.stream)?;
    manifest.param("bin_ps", a.bin_ps).param("range_ns", a.range_ns);
    let digest = manifest.seal();
    let stream = read_stream(&a.stream)?;
    let range_ps = (a.range_ns * 1e3).round() as u64;
    let h = tcspc::correlate(&stream, a.bin_ps, range_ps)?;
    if h.range_rounded {
        eprintln!(
            "warning: range {range_ps} ps is not a multiple of {} ps; rounded up to {} ps",
            a.bin_ps, h.range_ps
        );
    }
    write_hist(&a.out, &h, &digest)?;
    eprintln!("{} pairs in {} bins", h.total_pairs, h.counts.len());
    manifest.finish(started.elapsed(), vec![a.out.clone()], &sibling(&a.out, "manifest.json"))
}

#[derive(Serialize)]
struct CurveSidecar<'a, T: Serialize> {
    manifest_digest: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_curve_with_sidecar<T: Serialize>(
    path: &Path,
    lags: &[f64],
    values: &[f64],
    body: &T,
    digest: &str,
) -> Result<PathBuf, CliError> {
    write_atomic(path, |w| tio::write_curve(w, lags, values))?;
    let side = sibling(path, "json");
    let json = serde_json::to_string_pretty(&CurveSidecar {
        manifest_digest: digest,
        body,
    })
    .expect("sidecar serializes");
    write_atomic(&side, |w| writeln!(w, "{json}"))?;
    Ok(side)
}

fn default_mode(target: &CoincidenceHistogram, reference: bool) -> NormalizationMode {
    match (reference, target.acquisition.mode) {
        (true, _) => NormalizationMode::AgainstOrthogonal,
        (false, Mode::Pulsed) => NormalizationMode::TrianglePeakFit,
        (false, Mode::Cw) => NormalizationMode::WingLevel,
    }
}

fn normalize(a: &NormalizeArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("normalize");
    manifest.input(&a.target)?;
    if let Some(r) = &a.reference {
        manifest.input(r)?;
    }
    let target = read_histogram(&a.target)?;
    let reference = a.reference.as_deref().map(read_histogram).transpose()?;
    let mode = match a.mode {
        Some(NormalizationChoice::None) => {
            return Err(CliError::validation("--mode none is not a normalization"));
        }
        Some(m) => m.mode().expect("not none"),
        None => default_mode(&target, reference.is_some()),
    };
    manifest.param("mode", format!("{mode:?}"));
    if let Some(w) = a.wing_start_ns {
        manifest.param("wing_start_ns", w);
    }
    let digest = manifest.seal();
    let options = tcspc::NormalizeOptions {
        wing_start_ns: a.wing_start_ns,
    };
    let n = tcspc::normalize_with(&target, reference.as_ref(), mode, &options)?;
    for f in &n.flags {
        eprintln!("warning: {f}");
    }
    let side = write_curve_with_sidecar(&a.out, &n.centers_ns, &n.values, &n, &digest)?;
    manifest.finish(started.elapsed(), vec![a.out.clone(), side], &sibling(&a.out, "manifest.json"))
}

fn read_curve(path: &Path) -> Result<DipCurve, CliError> {
    let (lags, values) = tio::read_curve(open(path)?).map_err(|e| format_error(path, e))?;
    let side = sibling(path, "json");
    if !side.exists() {
        return Ok(DipCurve::from_values(lags, values));
    }
    let text = std::fs::read_to_string(&side).map_err(|source| CliError::Io {
        path: side.clone(),
        source,
    })?;
    let json: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", side.display())))?;
    let mut curve = DipCurve::from_values(lags, values);
    let n = curve.values.len();
    let floats = |key: &str| -> Option<Vec<f64>> {
        json.get(key)?
            .as_array()?
            .iter()
            .map(|v| v.as_f64().or(v.is_null().then_some(f64::INFINITY)))
            .collect()
    };
    if let Some(s) = floats("sigmas").filter(|s| s.len() == n) {
        curve.sigmas = s;
    }
    if let Some(m) = json
        .get("masked")
        .and_then(|m| m.as_array())
        .map(|m| m.iter().map(|b| b.as_bool().unwrap_or(false)).collect::<Vec<_>>())
        .filter(|m| m.len() == n)
    {
        curve.masked = m;
    }
    curve.window_ns = json.get("window_ns").and_then(|w| w.as_f64());
    Ok(curve)
}

/// Runs the requested fit; shared by `fit` and the in-process API.
pub fn fit_from_args(a: &FitArgs) -> Result<FitResult, CliError> {
    if a.model == FitModelChoice::Dip {
        if a.reference.is_some() {
            return Err(CliError::validation(
                "dip fits take a reconstructed curve; use reconstruct-dip to combine histograms",
            ));
        }
        let curve = read_curve(&a.input)?;
        let options = DipFitOptions {
            fixed_n_inf: a.fixed_n_inf,
            width: match a.width {
                WidthChoice::OneOverE => DipWidth::OneOverE,
                WidthChoice::Fwhm => DipWidth::Fwhm,
            },
        };
        return Ok(fit::fit_dip(&curve, &options)?);
    }
    let target = read_histogram(&a.input)?;
    let reference = a.reference.as_deref().map(read_histogram).transpose()?;
    let choice = a.normalization.unwrap_or(if reference.is_some() {
        NormalizationChoice::AgainstOrthogonal
    } else {
        NormalizationChoice::None
    });
    let hist = match choice.mode() {
        None => NormalizedHistogram::raw(&target),
        Some(mode) => tcspc::normalize(&target, reference.as_ref(), mode)?,
    };
    match a.model {
        FitModelChoice::Triangle => Ok(fit::fit_triangle(&hist)?),
        FitModelChoice::Fringe => {
            let fixed_t_p = match (a.fixed_tp, a.tp_from_reference, &reference) {
                (Some(t), _, _) => Some(t),
                (None, true, Some(r)) => {
                    let tri = fit::fit_triangle(&NormalizedHistogram::raw(r))?;
                    if !tri.converged {
                        return Err(CliError::Numeric("reference triangle fit did not converge".into()));
                    }
                    Some(tri.get("t_p"))
                }
                _ => None,
            };
            Ok(fit::fit_fringe_with(
                &hist,
                &FringeFitOptions {
                    fixed_t_p,
                    fixed_amplitude: None,
                },
            )?)
        }
        FitModelChoice::Dip => unreachable!("handled above"),
    }
}

fn fit_json(result: &FitResult, digest: &str) -> String {
    let mut v = serde_json::to_value(result).expect("fit result serializes");
    v["manifest_digest"] = serde_json::Value::String(digest.to_owned());
    serde_json::to_string_pretty(&v).expect("json value serializes")
}

fn fit_cmd(a: &FitArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("fit");
    let input_digest = manifest.input(&a.input)?;
    if let Some(r) = &a.reference {
        manifest.input(r)?;
    }
    manifest
        .param("model", format!("{:?}", a.model))
        .param("normalization", format!("{:?}", a.normalization))
        .param("fixed_tp", format!("{:?}", a.fixed_tp))
        .param("tp_from_reference", a.tp_from_reference)
        .param("fixed_n_inf", format!("{:?}", a.fixed_n_inf))
        .param("width", format!("{:?}", a.width));
    let digest = manifest.seal();
    let mut result = fit_from_args(a)?;
    result.input_digest = Some(input_digest);
    for f in &result.flags {
        eprintln!("warning: {f}");
    }
    let json = fit_json(&result, &digest);
    write_atomic(&a.out, |w| writeln!(w, "{json}"))?;
    for (k, v) in &result.params {
        match result.std_error(k) {
            Some(se) => eprintln!("{k} = {v:.6} ± {se:.6}"),
            None => eprintln!("{k} = {v:.6}"),
        }
    }
    manifest.finish(started.elapsed(), vec![a.out.clone()], &sibling(&a.out, "manifest.json"))?;
    if result.converged {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "fit did not converge ({}); result written to {}",
            result.flags.join("; "),
            a.out.display()
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VisibilityRecord {
    pub visibility: f64,
    pub mu: Option<f64>,
    pub t_c_ns: Option<f64>,
    pub t_p_ns: f64,
    pub t_r_ns: Option<f64>,
    pub v_m: f64,
    pub method: String,
}

pub fn visibility_value(a: &VisibilityArgs) -> Result<VisibilityRecord, CliError> {
    let t_c = match a.tc {
        Some(t) if a.tc_fwhm => Some(model::tc_fwhm_convert(t, WidthConversion::FromFwhm)?),
        other => other,
    };
    let method = format!("{:?}", a.method).to_lowercase();
    if let Some(t_r) = a.tr {
        let t_c = t_c.expect("clap requires --tc with --tr");
        return Ok(VisibilityRecord {
            visibility: model::windowed_visibility(t_r, t_c, a.vm)?,
            mu: Some(2.0 * t_c / t_r),
            t_c_ns: Some(t_c),
            t_p_ns: a.tp,
            t_r_ns: Some(t_r),
            v_m: a.vm,
            method: "windowed".into(),
        });
    }
    let mu = match (a.mu, t_c) {
        (Some(m), _) => RatioMu::new(m)?,
        (None, Some(t)) => RatioMu::from_times(t, a.tp)?,
        (None, None) => return Err(CliError::validation("give --mu, or --tc with --tp")),
    };
    let visibility = match a.method {
        VisibilityMethod::Closed => model::visibility_closed(mu, a.vm)?,
        VisibilityMethod::Quadrature => model::visibility_quadrature(mu, a.vm, model::DEFAULT_QUAD_TOL)?,
        VisibilityMethod::GaussianPulse => {
            model::FringeParams::new(a.tp, mu.get() * a.tp, a.vm)?;
            model::visibility_gaussian_pulse(mu, a.vm)
        }
    };
    Ok(VisibilityRecord {
        visibility,
        mu: Some(mu.get()),
        t_c_ns: t_c,
        t_p_ns: a.tp,
        t_r_ns: None,
        v_m: a.vm,
        method,
    })
}

fn visibility(a: &VisibilityArgs) -> Result<(), CliError> {
    let record = visibility_value(a)?;
    let json = serde_json::to_string(&record).expect("record serializes");
    if a.json {
        println!("{json}");
    } else {
        println!("V = {:.10}", record.visibility);
    }
    if let Some(out) = &a.out {
        let started = Instant::now();
        let mut manifest = RunManifest::new("visibility");
        manifest.param("record", &json);
        let digest = manifest.seal();
        let mut v = serde_json::to_value(&record).expect("record serializes");
        v["manifest_digest"] = serde_json::Value::String(digest);
        let text = serde_json::to_string_pretty(&v).expect("json value serializes");
        write_atomic(out, |w| writeln!(w, "{text}"))?;
        manifest.finish(started.elapsed(), vec![out.clone()], &sibling(out, "manifest.json"))?;
    }
    Ok(())
}

fn reconstruct_dip(a: &ReconstructDipArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("reconstruct-dip");
    manifest.input(&a.parallel)?;
    manifest.input(&a.orthogonal)?;
    manifest
        .param("tr_ns", a.tr_ns)
        .param("fit", a.fit)
        .param("fixed_n_inf", format!("{:?}", a.fixed_n_inf));
    let digest = manifest.seal();
    let par = read_histogram(&a.parallel)?;
    let orth = read_histogram(&a.orthogonal)?;
    let curve = tcspc::reconstruct_dip(&par, &orth, a.tr_ns)?;
    let side = write_curve_with_sidecar(&a.out, &curve.lags_ns, &curve.values, &curve, &digest)?;
    let mut outputs = vec![a.out.clone(), side];
    let mut failure = None;
    if a.fit {
        let result = fit::fit_dip(
            &curve,
            &DipFitOptions {
                fixed_n_inf: a.fixed_n_inf,
                ..DipFitOptions::default()
            },
        );
        match result {
            Ok(mut r) => {
                r.input_digest = manifest.inputs.first().map(|i| i.sha256.clone());
                let path = sibling(&a.out, "fit.json");
                write_atomic(&path, |w| writeln!(w, "{}", fit_json(&r, &digest)))?;
                eprintln!(
                    "v = {:.4}, t_c = {:.3} ns, FWHM = {:.3} ns",
                    r.get("v"),
                    r.get("t_c"),
                    r.derived["fwhm"].value
                );
                outputs.push(path);
            }
            Err(e) => failure = Some(CliError::from(e)),
        }
    }
    manifest.finish(started.elapsed(), outputs, &sibling(&a.out, "manifest.json"))?;
    failure.map_or(Ok(()), Err)
}
