//! Acceptance suite: one PASS/FAIL line per criterion at its stated tolerance.
//!
//! Criteria listed in `DOCUMENTED_FAILURES` cannot hold for the model as
//! defined. They are still evaluated and reported as FAIL. Only an
//! undocumented failure, or a documented one that starts passing, makes
//! this target exit non-zero.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use tpi_cli::sweep::{sweep_rows, SweepArgs};
use tpi_core::fit::{self, DipFitOptions, FitResult, FringeFitOptions};
use tpi_core::model::{self, RatioMu, WidthConversion};
use tpi_core::simulate::{contrast_for_vm, Mode, NoiseModel, Polarization, SimConfig, Simulator};
use tpi_core::tcspc::{self, CoincidenceHistogram, DipCurve, NormalizationMode, NormalizedHistogram};

const DOCUMENTED_FAILURES: &[(&str, &str)] = &[(
    "2b",
    "for μ → 0 the closed form behaves as √π·μ·v_m, so V(10⁻³) ≈ 1.8e-3·v_m exceeds 1e-5 for every v_m ≥ 0.0057",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- analytic

fn c1_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let (lo, hi) = (0.05f64.ln(), 20.0f64.ln());
    for i in 0..200 {
        let mu = RatioMu::new((lo + (hi - lo) * i as f64 / 199.0).exp()).unwrap();
        for v_m in [0.1, 0.46, 0.5] {
            let a = model::visibility_closed(mu, v_m).unwrap();
            let b = model::visibility_quadrature(mu, v_m, 1e-11).unwrap();
            worst = worst.max((a - b).abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 5.0,
        format!("max |closed − quadrature| = {worst:.2e} (≤ 1e-9), {secs:.2} s (< 5 s)"),
    )
}

fn c2a_large_mu() -> Outcome {
    let mut worst = 0.0f64;
    for v_m in [0.1, 0.46, 0.5] {
        let v = model::visibility_closed(RatioMu::new(1e3).unwrap(), v_m).unwrap();
        worst = worst.max((v_m - v) / v_m);
    }
    outcome(worst <= 1e-5, format!("max (v_m − V(10³))/v_m = {worst:.3e} (≤ 1e-5)"))
}

fn c2b_small_mu() -> Outcome {
    let mut worst = 0.0f64;
    for v_m in [0.1, 0.46, 0.5] {
        worst = worst.max(model::visibility_closed(RatioMu::new(1e-3).unwrap(), v_m).unwrap());
    }
    outcome(worst <= 1e-5, format!("max V(10⁻³) = {worst:.3e} (≤ 1e-5)"))
}

fn c3_reference_triple() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (quoted, target, tol) in [(45.0, 0.18, 0.01), (85.0, 0.29, 0.01), (250.0, 0.41, 0.02)] {
        let t_c = model::tc_fwhm_convert(quoted, WidthConversion::FromFwhm).unwrap();
        let mu = RatioMu::from_times(t_c, 100.0).unwrap();
        let v = model::visibility_quadrature(mu, 0.46, 1e-10).unwrap();
        let ok = (v - target).abs() <= tol;
        pass &= ok;
        parts.push(format!("{quoted} ns → {v:.4} ({target} ± {tol})"));
    }
    outcome(pass, parts.join(", "))
}

fn c4_extinction() -> Outcome {
    let db = model::extinction_db(0.013).unwrap();
    let rounded = (db * 100.0).round() / 100.0;
    outcome(rounded == 18.86, format!("extinction_db(0.013) = {db:.4} → {rounded:.2} dB"))
}

fn c5_noise_ratio() -> Outcome {
    let ratio = model::tc_from_sigma(8.23).unwrap() / model::tc_from_sigma(19.42).unwrap();
    let quoted = 121.47 / 51.49;
    let rel = (ratio / quoted - 1.0).abs();
    let exact = (ratio - 19.42 / 8.23).abs() < 1e-12;
    outcome(
        rel <= 0.01 && exact,
        format!("t_c ratio {ratio:.4} = 19.42/8.23; quoted width ratio {quoted:.4}; rel. diff {rel:.2e} (≤ 1%)"),
    )
}

// ------------------------------------------------------------- Monte Carlo

const BATCH: u64 = 1_000_000;
const T_P: f64 = 100.0;
const V_M: f64 = 0.46;
const PULSED_FRAMES: u64 = 10_000_000;

fn histogram(config: &SimConfig, bin_ps: u64, range_ps: u64) -> CoincidenceHistogram {
    let sim = Simulator::new(config.clone()).unwrap();
    let mut total: Option<CoincidenceHistogram> = None;
    let mut start = 0;
    while start < config.num_frames {
        let end = (start + BATCH).min(config.num_frames);
        let part = tcspc::correlate(&sim.run_frames(start..end).unwrap(), bin_ps, range_ps).unwrap();
        match &mut total {
            Some(t) => t.merge(&part).unwrap(),
            None => total = Some(part),
        }
        start = end;
    }
    total.unwrap()
}

fn pulsed(polarization: Polarization, seed: u64) -> SimConfig {
    SimConfig {
        polarization,
        mean_photons_per_pulse: 2.0,
        num_frames: PULSED_FRAMES,
        seed,
        ..SimConfig::default()
    }
}

/// Orthogonal reference shared by criteria 6, 7 and 9.
fn orthogonal() -> &'static CoincidenceHistogram {
    static H: OnceLock<CoincidenceHistogram> = OnceLock::new();
    H.get_or_init(|| histogram(&pulsed(Polarization::Orthogonal, 1), 512, 200_000))
}

fn reference_tp() -> f64 {
    static T: OnceLock<f64> = OnceLock::new();
    *T.get_or_init(|| {
        let f = fit::fit_triangle(&NormalizedHistogram::raw(orthogonal())).unwrap();
        assert!(f.converged);
        f.get("t_p")
    })
}

const FRINGE_TC: [f64; 3] = [27.0, 51.0, 150.0];

/// Parallel runs of criterion 7, reused by criterion 9.
fn parallel_runs() -> &'static Vec<CoincidenceHistogram> {
    static H: OnceLock<Vec<CoincidenceHistogram>> = OnceLock::new();
    H.get_or_init(|| {
        FRINGE_TC
            .iter()
            .enumerate()
            .map(|(i, &t_c)| {
                let c = SimConfig {
                    noise: NoiseModel::Gaussian {
                        sigma_mhz: model::sigma_from_tc(t_c).unwrap(),
                    },
                    interference_contrast: contrast_for_vm(V_M).unwrap(),
                    ..pulsed(Polarization::Parallel, 10 + i as u64)
                };
                histogram(&c, 512, 200_000)
            })
            .collect()
    })
}

fn c6_triangle() -> Outcome {
    let h = orthogonal();
    let n = tcspc::normalize(h, None, NormalizationMode::TrianglePeakFit).unwrap();
    let mut sup = 0.0f64;
    for (i, &t) in n.centers_ns.iter().enumerate() {
        if !n.masked[i] {
            sup = sup.max((n.values[i] - model::triangle_corr(t, T_P).unwrap()).abs());
        }
    }
    outcome(
        h.total_pairs >= 1_000_000 && sup <= 0.02,
        format!("{} coincidences (≥ 10⁶), sup-norm {sup:.4} (≤ 0.02)", h.total_pairs),
    )
}

fn c7_fringe() -> Outcome {
    let t_p = reference_tp();
    let mut pass = true;
    let mut parts = vec![format!("reference t_p = {t_p:.2} ns")];
    for (par, &t_c) in parallel_runs().iter().zip(&FRINGE_TC) {
        let n = tcspc::normalize(par, Some(orthogonal()), NormalizationMode::AgainstOrthogonal).unwrap();
        let f = fit::fit_fringe_with(
            &n,
            &FringeFitOptions {
                fixed_t_p: Some(t_p),
                fixed_amplitude: None,
            },
        )
        .unwrap();
        let peak = n.value_at(0.0).unwrap();
        let tc_err = f.get("t_c") / t_c - 1.0;
        let vm_err = f.get("v_m") - V_M;
        let ok = f.converged && tc_err.abs() <= 0.05 && vm_err.abs() <= 0.02 && (peak - 0.54).abs() <= 0.02;
        pass &= ok;
        parts.push(format!(
            "t_c {t_c}: fit {:.2} ({:+.1}%), v_m {:.4}, peak {peak:.4}",
            f.get("t_c"),
            100.0 * tc_err,
            f.get("v_m")
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c8_cw_flat() -> Outcome {
    let cw = |polarization, seed| SimConfig {
        mode: Mode::Cw,
        polarization,
        frame_length_ns: 100_000.0,
        mean_photons_per_pulse: 400.0,
        interference_contrast: 0.959,
        noise: NoiseModel::None,
        num_frames: 10_000,
        seed,
        ..SimConfig::default()
    };
    // 20.48 ns bins keep the number of simultaneous 3σ comparisons small.
    let bin = 40 * 512;
    let par = histogram(&cw(Polarization::Parallel, 30), bin, 200_000);
    let orth = histogram(&cw(Polarization::Orthogonal, 31), bin, 200_000);
    let n = tcspc::normalize(&par, Some(&orth), NormalizationMode::AgainstOrthogonal).unwrap();
    let level = n.values.iter().sum::<f64>() / n.values.len() as f64;
    let sigmas = n.sigmas();
    let worst = n
        .values
        .iter()
        .zip(&sigmas)
        .map(|(v, s)| ((v - level) / s).abs())
        .fold(0.0, f64::max);
    outcome(
        worst <= 3.0 && (level - 0.54).abs() <= 0.02,
        format!(
            "level {level:.4} (0.54 ± 0.02), largest deviation {worst:.2}σ (≤ 3) over {} bins",
            n.values.len()
        ),
    )
}

fn c9_dip() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (par, &t_c) in parallel_runs().iter().zip(&FRINGE_TC) {
        let curve = tcspc::reconstruct_dip(par, orthogonal(), 10.0).unwrap();
        let f = fit::fit_dip(
            &curve,
            &DipFitOptions {
                fixed_n_inf: Some(1.0),
                ..DipFitOptions::default()
            },
        )
        .unwrap();
        let fwhm = f.derived["fwhm"].value;
        let fwhm_err = fwhm / (model::fwhm_factor() * t_c) - 1.0;
        let v_err = f.get("v") - V_M;
        let ok = f.converged && v_err.abs() <= 0.02 && fwhm_err.abs() <= 0.05;
        pass &= ok;
        parts.push(format!(
            "t_c {t_c}: v {:.4}, FWHM {fwhm:.2} ns ({:+.1}%)",
            f.get("v"),
            100.0 * fwhm_err
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c10_sweep() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let args = SweepArgs {
        mu_grid: "0.45:2.5:8".into(),
        vm: V_M,
        mc: true,
        analytic: false,
        config: None,
        frames: 20_000_000,
        photons: 0.1,
        bound_ns: None,
        bin_ps: 512,
        seed: 40,
        out: dir.path().join("sweep.csv"),
    };
    let rows = sweep_rows(&args).unwrap();
    let mut pass = rows.len() == 8;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for r in &rows {
        match &r.mc {
            Some(Ok(est)) => {
                let z = (est.value - r.v_analytic) / est.std_error;
                worst = worst.max(z.abs());
                pass &= z.abs() <= 3.0;
                parts.push(format!("{:.3}:{:.4}±{:.4}", r.mu, est.value, est.std_error));
            }
            other => {
                pass = false;
                parts.push(format!("{:.3}: {other:?}", r.mu));
            }
        }
    }
    let analytic_increasing = rows.windows(2).all(|w| w[1].v_analytic > w[0].v_analytic);
    let mc_increasing = rows.windows(2).all(|w| match (&w[0].mc, &w[1].mc) {
        (Some(Ok(a)), Some(Ok(b))) => b.value > a.value,
        _ => false,
    });
    pass &= analytic_increasing;
    outcome(
        pass,
        format!(
            "max |z| = {worst:.2} (≤ 3); closed form strictly increasing: {analytic_increasing}; \
             MC point estimates increasing: {mc_increasing} (informational); [{}]",
            parts.join(" ")
        ),
    )
}

// ------------------------------------------------------ estimator coverage

fn poisson_counts(means: &[f64], seed: u64) -> Vec<u64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Poisson};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    means
        .iter()
        .map(|&m| if m > 0.0 { Poisson::new(m).unwrap().sample(&mut rng) as u64 } else { 0 })
        .collect()
}

fn covered(f: &FitResult, truth: &[(&str, f64)]) -> Vec<bool> {
    truth
        .iter()
        .map(|&(name, t)| match f.std_error(name) {
            Some(se) if f.converged => (f.get(name) - t).abs() <= 3.0 * se,
            _ => false,
        })
        .collect()
}

fn c11_coverage() -> Outcome {
    let reps = 500u64;
    let grid: Vec<f64> = (-200..=200).map(|k| k as f64).collect();
    type Study = (&'static str, Vec<(&'static str, f64)>, Box<dyn Fn(u64) -> Option<FitResult> + Sync>);
    let studies: Vec<Study> = vec![
        (
            "triangle",
            vec![("amplitude", 3000.0), ("t_p", 100.0)],
            Box::new({
                let grid = grid.clone();
                move |seed| {
                    let means: Vec<f64> = grid.iter().map(|&t| 3000.0 * (1.0 - t.abs() / 100.0).max(0.0)).collect();
                    let h = counts_hist(&grid, poisson_counts(&means, seed));
                    fit::fit_triangle(&h).ok()
                }
            }),
        ),
        (
            "fringe",
            vec![("amplitude", 3000.0), ("t_c", 45.0), ("v_m", 0.46)],
            Box::new({
                let grid = grid.clone();
                move |seed| {
                    let p = model::FringeParams::new(100.0, 45.0, 0.46).unwrap();
                    let means: Vec<f64> = grid.iter().map(|&t| 3000.0 * model::fringe_corr(t, &p).unwrap()).collect();
                    let h = counts_hist(&grid, poisson_counts(&means, seed));
                    fit::fit_fringe(&h, Some(100.0)).ok()
                }
            }),
        ),
        (
            "dip",
            vec![("n_inf", 1.0), ("v", 0.46), ("t_c", 45.0)],
            Box::new({
                let grid = grid.clone();
                move |seed| {
                    // Scaled Poisson counts as in a reconstructed ratio.
                    let p = model::DipParams::new(1.0, 0.46, 45.0).unwrap();
                    let scale = 1.0 / 2000.0;
                    let means: Vec<f64> = grid.iter().map(|&t| model::hom_dip(t, &p) / scale).collect();
                    let counts = poisson_counts(&means, seed);
                    let mut c = DipCurve::from_values(grid.clone(), counts.iter().map(|&k| k as f64 * scale).collect());
                    c.sigmas = counts.iter().map(|&k| scale * (k.max(1) as f64).sqrt()).collect();
                    fit::fit_dip(&c, &DipFitOptions::default()).ok()
                }
            }),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, truth, run) in &studies {
        let hits: Vec<Vec<bool>> = (0..reps)
            .into_par_iter()
            .map(|s| match run(1_000 + s) {
                Some(f) => covered(&f, truth),
                None => vec![false; truth.len()],
            })
            .collect();
        for (k, (param, _)) in truth.iter().enumerate() {
            let rate = hits.iter().filter(|h| h[k]).count() as f64 / reps as f64;
            pass &= rate >= 0.99;
            parts.push(format!("{name}.{param} {:.1}%", 100.0 * rate));
        }
    }
    outcome(pass, format!("coverage within 3 SE over {reps} seeds (≥ 99%): {}", parts.join(", ")))
}

fn counts_hist(grid: &[f64], counts: Vec<u64>) -> NormalizedHistogram {
    NormalizedHistogram {
        centers_ns: grid.to_vec(),
        values: counts.iter().map(|&c| c as f64).collect(),
        masked: vec![false; grid.len()],
        counts: Some(counts),
        count_scale: 1.0,
        mode: None,
        flags: Vec::new(),
    }
}

// -------------------------------------------------------------- determinism

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(
        &config,
        "mean_photons_per_pulse = 0.5\nnoise = gaussian\ncoherence_time_ns = 60\ninterference_contrast = 0.959\nnum_frames = 200000\nseed = 77\n",
    )
    .unwrap();
    let run = |workers: &str, out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_tpi"))
            .args(["--workers", workers, "simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap()
            .status
            .success()
    };
    let mut files = Vec::new();
    for w in ["1", "2", "8"] {
        let out = dir.path().join(format!("stream-{w}.txt"));
        if !run(w, &out) {
            return outcome(false, format!("simulate with {w} workers failed"));
        }
        files.push(std::fs::read(&out).unwrap());
    }
    let again = dir.path().join("stream-1b.txt");
    run("1", &again);
    files.push(std::fs::read(&again).unwrap());
    let identical = files.windows(2).all(|w| w[0] == w[1]);
    outcome(
        identical && !files[0].is_empty(),
        format!("{} bytes, identical across 1/2/8 workers and a repeat: {identical}", files[0].len()),
    )
}

fn main() {
    let criteria: Vec<(&str, &str, fn() -> Outcome)> = vec![
        ("1", "oracle equivalence", c1_oracle),
        ("2a", "large-μ limit", c2a_large_mu),
        ("2b", "small-μ limit", c2b_small_mu),
        ("3", "reference visibility triple", c3_reference_triple),
        ("4", "extinction arithmetic", c4_extinction),
        ("5", "frequency-noise proportionality", c5_noise_ratio),
        ("6", "MC triangle convergence", c6_triangle),
        ("7", "MC fringe round trip", c7_fringe),
        ("8", "CW flat line", c8_cw_flat),
        ("9", "windowed dip reconstruction", c9_dip),
        ("10", "visibility sweep", c10_sweep),
        ("11", "estimator consistency", c11_coverage),
        ("12", "determinism", c12_determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let documented = DOCUMENTED_FAILURES.iter().find(|(d, _)| *d == id);
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} [{id}] {name}: {} ({:.1} s)",
            result.detail,
            t0.elapsed().as_secs_f64()
        );
        match (result.pass, documented) {
            (false, Some((_, why))) => println!("     documented as unattainable: {why}"),
            (false, None) => unexpected.push(id),
            (true, Some(_)) => {
                println!("     listed as unattainable but passed; update DOCUMENTED_FAILURES");
                unexpected.push(id);
            }
            (true, None) => {}
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected results: {unexpected:?}");
        std::process::exit(1);
    }
}
