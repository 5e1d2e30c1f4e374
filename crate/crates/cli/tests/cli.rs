//! End-to-end behavior of the `tpi` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tpi(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpi"))
        .args(args)
        .current_dir(dir)
        .env_remove("TPI_WORKERS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const HEADER: &str = "# tpi-events v1\n# polarization = orthogonal\n# num_frames = 2\nframe_index,detector,time_ps\n";

fn hist_rows(path: &Path) -> Vec<(i64, u64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("bin_center"))
        .map(|l| {
            let (c, n) = l.split_once(',').unwrap();
            (c.parse().unwrap(), n.parse().unwrap())
        })
        .collect()
}

#[test]
fn zero_frames_and_zero_bin_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpi(&["simulate", "--frames", "0", "--out", "s.txt"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!dir.path().join("s.txt").exists());

    fs::write(dir.path().join("s.txt"), format!("{HEADER}0,D1,1000\n0,D2,2000\n")).unwrap();
    let o = tpi(&["correlate", "s.txt", "--bin-ps", "0", "--out", "h.csv"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn hand_written_stream_gives_hand_counted_pairs() {
    let dir = tempfile::tempdir().unwrap();
    // frame 0: D1 − D2 = −50 ns; frame 1: +10 ns; no pairs across frames
    let events = "0,D1,100000\n0,D2,150000\n1,D2,690000\n1,D1,700000\n";
    fs::write(dir.path().join("s.txt"), format!("{HEADER}{events}")).unwrap();
    let o = tpi(&["correlate", "s.txt", "--bin-ps", "1000", "--out", "h.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let nonzero: Vec<_> = hist_rows(&dir.path().join("h.csv")).into_iter().filter(|r| r.1 > 0).collect();
    assert_eq!(nonzero, vec![(-50_000, 1), (10_000, 1)]);
}

#[test]
fn malformed_line_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.txt"), format!("{HEADER}0,D1,100\n0,D3,200\n")).unwrap();
    let o = tpi(&["correlate", "s.txt", "--out", "h.csv"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));
}

#[test]
fn visibility_examples() {
    let dir = tempfile::tempdir().unwrap();
    let value = |args: &[&str]| -> f64 {
        let o = tpi(args, dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let out = String::from_utf8(o.stdout).unwrap();
        out.trim().strip_prefix("V = ").unwrap().parse().unwrap()
    };
    assert!((value(&["visibility", "--mu", "1"]) - 0.43076).abs() < 1e-5);
    assert!((value(&["visibility", "--tc-fwhm", "--tc", "45", "--vm", "0.46"]) - 0.18676).abs() < 1e-4);
    assert!((value(&["visibility", "--tc", "45", "--tr", "1e-6"]) - 0.5).abs() < 1e-6);
    let o = tpi(&["visibility", "--mu", "-1"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn analytic_sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpi(&["sweep", "--mu-grid", "1", "--out", "one.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("one.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "mu,t_c_ns,v_analytic,v_mc,v_mc_err,error");
    assert_eq!(rows.len(), 2);
    assert!(rows[1].ends_with(",,,"));

    let o = tpi(&["sweep", "--analytic", "--out", "grid.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 9);

    let o = tpi(&["sweep", "--mu-grid", "0.01", "--out", "bad.csv"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn help_shows_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let text = |args: &[&str]| String::from_utf8(tpi(args, dir.path()).stdout).unwrap();
    let sim = text(&["simulate", "--help"]);
    for needle in ["100 ns", "2 MHz", "0.1 photons", "512 ps"] {
        assert!(sim.contains(needle), "simulate --help lacks `{needle}`");
    }
    assert!(text(&["correlate", "--help"]).contains("[default: 512]"));
    assert!(text(&["reconstruct-dip", "--help"]).contains("[default: 10]"));
}

#[test]
fn io_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpi(&["correlate", "missing.txt", "--out", "h.csv"], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = tpi(
        &["simulate", "--frames", "10", "--out", "no/such/dir/s.txt"],
        dir.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn flat_histogram_triangle_fit_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from(
        "# tpi-histogram v1\n# bin_width_ps = 20000\n# range_ps = 200000\n# range_rounded = false\n\
         # total_pairs = 1900\n# singles_d1 = 5000\n# singles_d2 = 5000\n# frames = 10000\n# mode = pulsed\n\
         # polarization = orthogonal\n# pulse_fwhm_ns = 100\n# frame_length_ns = 500\n\
         # coherence_time_ns = none\nbin_center_ps,counts\n",
    );
    for k in -9..=9 {
        text.push_str(&format!("{},100\n", k * 20000));
    }
    fs::write(dir.path().join("flat.csv"), text).unwrap();
    let o = tpi(&["fit", "flat.csv", "--model", "triangle", "--out", "fit.json"], dir.path());
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn zero_workers_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tpi"))
        .args(["visibility", "--mu", "1"])
        .current_dir(dir.path())
        .env("TPI_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("par.cfg"),
        "mean_photons_per_pulse = 2\nnoise = gaussian\ncoherence_time_ns = 50\ninterference_contrast = 0.959\nnum_frames = 100000\nseed = 3\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("orth.cfg"),
        "mean_photons_per_pulse = 2\npolarization = orthogonal\nnum_frames = 100000\nseed = 4\n",
    )
    .unwrap();
    let run = |tag: &str| {
        for (cfg, name) in [("par.cfg", "par"), ("orth.cfg", "orth")] {
            let s = format!("{name}{tag}.bin");
            let o = tpi(&["simulate", "--config", cfg, "--format", "binary", "--out", &s], dir.path());
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            let h = format!("{name}{tag}.csv");
            let o = tpi(&["correlate", &s, "--bin-ps", "2048", "--out", &h], dir.path());
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
        let (p, r, f) = (format!("par{tag}.csv"), format!("orth{tag}.csv"), format!("fit{tag}.json"));
        let o = tpi(
            &["fit", &p, "--model", "fringe", "--reference", &r, "--tp-from-reference", "--out", &f],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        ["par", "orth"]
            .iter()
            .map(|n| fs::read(dir.path().join(format!("{n}{tag}.csv"))).unwrap())
            .chain([fs::read(dir.path().join(&f)).unwrap()])
            .collect::<Vec<_>>()
    };
    assert_eq!(run("a"), run("b"));
    let fit: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("fita.json")).unwrap()).unwrap();
    let t_c = fit["params"]["t_c"].as_f64().unwrap();
    assert!((t_c - 50.0).abs() < 10.0, "{t_c}");
}
