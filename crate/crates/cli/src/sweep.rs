//! Visibility against the coherence ratio μ = t_c/t_p.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use tpi_core::fit::{estimate_visibility_integrated, VisibilityEstimate};
use tpi_core::model::{self, RatioMu};
use tpi_core::simulate::{contrast_for_vm, NoiseModel, Polarization, SimConfig, Simulator};
use tpi_core::tcspc::{self, CoincidenceHistogram};

use crate::output::{sibling, write_atomic, RunManifest};
use crate::{load_config, CliError};

/// Admissible μ range for sweeps.
pub const MU_RANGE: (f64, f64) = (0.05, 50.0);
const BATCH_FRAMES: u64 = 1_000_000;

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// μ grid: `start:stop:count` (linear), `log:start:stop:count`, or a comma list.
    #[arg(long, default_value = "0.45:2.5:8")]
    pub mu_grid: String,
    /// Maximum visibility v_m; the simulated contrast is √(2·v_m).
    #[arg(long, default_value_t = 0.46)]
    pub vm: f64,
    /// Run a Monte Carlo pair per point in addition to the closed form.
    #[arg(long, conflicts_with = "analytic")]
    pub mc: bool,
    /// Closed form only (the default).
    #[arg(long)]
    pub analytic: bool,
    /// Base config for the Monte Carlo runs (pulse shape, rate, photons).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Frames per Monte Carlo run.
    #[arg(long, default_value_t = 4_000_000)]
    pub frames: u64,
    /// Mean photons per pulse, both detectors together, for Monte Carlo runs.
    #[arg(long, default_value_t = 0.1)]
    pub photons: f64,
    /// Integration bound in ns (defaults to t_p).
    #[arg(long)]
    pub bound_ns: Option<f64>,
    /// Histogram bin width in ps.
    #[arg(long, default_value_t = tcspc::DEFAULT_BIN_PS)]
    pub bin_ps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output `mu,t_c_ns,v_analytic,v_mc,v_mc_err,error`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mu: f64,
    pub t_c_ns: f64,
    pub v_analytic: f64,
    pub mc: Option<Result<VisibilityEstimate, String>>,
}

pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: &str| CliError::Validation(format!("--mu-grid `{spec}`: {m}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
    let parts: Vec<&str> = spec.split(':').collect();
    let grid: Vec<f64> = match parts.as_slice() {
        [list] => list.split(',').map(num).collect::<Result<_, _>>()?,
        [a, b, n] | [_, a, b, n] => {
            let log = parts.len() == 4;
            if log && parts[0] != "log" {
                return Err(bad("four fields must start with `log`"));
            }
            let (a, b) = (num(a)?, num(b)?);
            let n: usize = n.trim().parse().map_err(|_| bad("count must be a positive integer"))?;
            if n == 0 {
                return Err(bad("count must be a positive integer"));
            }
            if n == 1 {
                vec![a]
            } else if log {
                if !(a > 0.0 && b > 0.0) {
                    return Err(bad("log grids need positive ends"));
                }
                (0..n)
                    .map(|i| (a.ln() + (b.ln() - a.ln()) * i as f64 / (n - 1) as f64).exp())
                    .collect()
            } else {
                (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
            }
        }
        _ => return Err(bad("expected start:stop:count, log:start:stop:count or a list")),
    };
    for &m in &grid {
        if !(MU_RANGE.0..=MU_RANGE.1).contains(&m) {
            return Err(bad(&format!("μ = {m} outside [{}, {}]", MU_RANGE.0, MU_RANGE.1)));
        }
    }
    Ok(grid)
}

fn histogram(config: &SimConfig, bin_ps: u64, range_ps: u64) -> Result<CoincidenceHistogram, tpi_core::Error> {
    let sim = Simulator::new(config.clone())?;
    let mut total: Option<CoincidenceHistogram> = None;
    let mut start = 0;
    while start < config.num_frames {
        let end = (start + BATCH_FRAMES).min(config.num_frames);
        let part = tcspc::correlate(&sim.run_frames(start..end)?, bin_ps, range_ps)?;
        match &mut total {
            Some(t) => t.merge(&part)?,
            None => total = Some(part),
        }
        start = end;
    }
    total.ok_or_else(|| tpi_core::Error::EmptyStream("no frames".into()))
}

/// Computes the sweep table. Monte Carlo failures are kept per row.
pub fn sweep_rows(a: &SweepArgs) -> Result<Vec<SweepRow>, CliError> {
    let grid = parse_grid(&a.mu_grid)?;
    let mut base = load_config(a.config.as_deref())?;
    base.num_frames = a.frames;
    base.mean_photons_per_pulse = a.photons;
    base.interference_contrast = contrast_for_vm(a.vm)?;
    base.noise = NoiseModel::None;
    let t_p = base.envelope.t_p();
    let bound = a.bound_ns.unwrap_or(t_p);
    let range_ps = ((2.0 * t_p).max(bound) * 1e3).ceil() as u64;

    let orth = if a.mc {
        base.validate()?;
        let c = SimConfig {
            polarization: Polarization::Orthogonal,
            seed: a.seed,
            ..base.clone()
        };
        Some(histogram(&c, a.bin_ps, range_ps)?)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(grid.len());
    for (i, &mu) in grid.iter().enumerate() {
        let v_analytic = model::visibility_closed(RatioMu::new(mu)?, a.vm)?;
        let t_c = mu * t_p;
        let mc = orth.as_ref().map(|orth| {
            let run = || -> Result<VisibilityEstimate, tpi_core::Error> {
                let c = SimConfig {
                    polarization: Polarization::Parallel,
                    noise: NoiseModel::Gaussian {
                        sigma_mhz: model::sigma_from_tc(t_c)?,
                    },
                    seed: a.seed.wrapping_add(1 + i as u64),
                    ..base.clone()
                };
                let par = histogram(&c, a.bin_ps, range_ps)?;
                estimate_visibility_integrated(&par, orth, bound, false)
            };
            run().map_err(|e| e.to_string())
        });
        rows.push(SweepRow {
            mu,
            t_c_ns: t_c,
            v_analytic,
            mc,
        });
    }
    Ok(rows)
}

pub fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("sweep");
    manifest.config_path = a.config.clone();
    if a.config.is_some() {
        manifest.config = Some(load_config(a.config.as_deref())?);
    }
    manifest.seed = Some(a.seed);
    manifest
        .param("mu_grid", &a.mu_grid)
        .param("vm", a.vm)
        .param("mc", a.mc)
        .param("frames", a.frames)
        .param("photons", a.photons)
        .param("bound_ns", format!("{:?}", a.bound_ns))
        .param("bin_ps", a.bin_ps);
    let digest = manifest.seal();
    let rows = sweep_rows(a)?;
    write_atomic(&a.out, |w| {
        writeln!(w, "# manifest_digest = {digest}")?;
        writeln!(w, "mu,t_c_ns,v_analytic,v_mc,v_mc_err,error")?;
        for r in &rows {
            let (v, e, err) = match &r.mc {
                None => (String::new(), String::new(), String::new()),
                Some(Ok(est)) => (est.value.to_string(), est.std_error.to_string(), String::new()),
                Some(Err(msg)) => (String::new(), String::new(), format!("\"{}\"", msg.replace('"', "'"))),
            };
            writeln!(w, "{},{},{},{v},{e},{err}", r.mu, r.t_c_ns, r.v_analytic)?;
        }
        Ok(())
    })?;
    let failures = rows.iter().filter(|r| matches!(r.mc, Some(Err(_)))).count();
    if failures > 0 {
        eprintln!("warning: {failures} Monte Carlo point(s) failed; see the error column");
    }
    manifest.finish(started.elapsed(), vec![a.out.clone()], &sibling(&a.out, "manifest.json"))
}
