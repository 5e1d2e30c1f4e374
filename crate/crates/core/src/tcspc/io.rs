//! Histogram and curve files.
//!
//! Histogram CSV:
//!
//! ```text
//! # tpi-histogram v1
//! # bin_width_ps = 512
//! # ...                  (binning, totals and acquisition keys)
//! # @input_digest = ...  (free-form metadata, `@` prefix)
//! bin_center_ps,counts
//! -199680,0
//! ```
//!
//! Curves (normalized histograms, dip curves) are plain `lag_ns,value` rows;
//! masks and uncertainties travel in a JSON sidecar written by the caller.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use super::{Acquisition, CoincidenceHistogram};
use crate::error::Error;
use crate::simulate::format::FormatError;
use crate::simulate::{Mode, Polarization};

const HIST_BANNER: &str = "tpi-histogram v1";
const HIST_COLUMNS: &str = "bin_center_ps,counts";
const CURVE_COLUMNS: &str = "lag_ns,value";

pub type Metadata = BTreeMap<String, String>;

fn mode_str(m: Mode) -> &'static str {
    match m {
        Mode::Pulsed => "pulsed",
        Mode::Cw => "cw",
    }
}

fn polarization_str(p: Polarization) -> &'static str {
    match p {
        Polarization::Parallel => "parallel",
        Polarization::Orthogonal => "orthogonal",
    }
}

pub fn write_histogram<W: Write>(mut w: W, h: &CoincidenceHistogram, meta: &Metadata) -> io::Result<()> {
    let a = &h.acquisition;
    writeln!(w, "# {HIST_BANNER}")?;
    writeln!(w, "# bin_width_ps = {}", h.bin_width_ps)?;
    writeln!(w, "# range_ps = {}", h.range_ps)?;
    writeln!(w, "# range_rounded = {}", h.range_rounded)?;
    writeln!(w, "# total_pairs = {}", h.total_pairs)?;
    writeln!(w, "# singles_d1 = {}", h.singles[0])?;
    writeln!(w, "# singles_d2 = {}", h.singles[1])?;
    writeln!(w, "# frames = {}", h.frames)?;
    writeln!(w, "# mode = {}", mode_str(a.mode))?;
    writeln!(w, "# polarization = {}", polarization_str(a.polarization))?;
    writeln!(w, "# pulse_fwhm_ns = {}", a.pulse_fwhm_ns)?;
    writeln!(w, "# frame_length_ns = {}", a.frame_length_ns)?;
    match a.coherence_time_ns {
        Some(t) => writeln!(w, "# coherence_time_ns = {t}")?,
        None => writeln!(w, "# coherence_time_ns = none")?,
    }
    for (k, v) in meta {
        writeln!(w, "# @{k} = {v}")?;
    }
    writeln!(w, "{HIST_COLUMNS}")?;
    for (i, c) in h.counts.iter().enumerate() {
        writeln!(w, "{},{}", h.bin_center_ps(i), c)?;
    }
    w.flush()
}

struct HeaderValues {
    values: BTreeMap<String, (usize, String)>,
}

impl HeaderValues {
    fn take(&mut self, key: &str) -> Result<(usize, String), Error> {
        self.values.remove(key).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing header key `{key}`"),
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, Error> {
        let (line, v) = self.take(key)?;
        v.parse().map_err(|_| Error::Parse {
            line,
            message: format!("`{key}`: cannot parse `{v}`"),
        })
    }
}

pub fn read_histogram<R: BufRead>(r: R) -> Result<(CoincidenceHistogram, Metadata), FormatError> {
    let mut header = HeaderValues {
        values: BTreeMap::new(),
    };
    let mut meta = Metadata::new();
    let mut rows: Vec<(usize, i64, u64)> = Vec::new();
    let mut in_body = false;
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let t = line.trim();
        if !in_body {
            if let Some(rest) = t.strip_prefix('#') {
                let rest = rest.trim();
                if rest.is_empty() || rest == HIST_BANNER {
                    continue;
                }
                let (k, v) = rest.split_once('=').ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("expected `# key = value`, got `{t}`"),
                })?;
                let (k, v) = (k.trim(), v.trim().to_owned());
                if let Some(k) = k.strip_prefix('@') {
                    meta.insert(k.to_owned(), v);
                } else if header.values.insert(k.to_owned(), (line_no, v)).is_some() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("duplicate key `{k}`"),
                    }
                    .into());
                }
                continue;
            }
            if t != HIST_COLUMNS {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected column header `{HIST_COLUMNS}`"),
                }
                .into());
            }
            in_body = true;
            continue;
        }
        if t.is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            line: line_no,
            message: format!("expected `bin_center_ps,counts`, got `{t}`"),
        };
        let (c, n) = t.split_once(',').ok_or_else(bad)?;
        let c = c.trim().parse::<i64>().map_err(|_| bad())?;
        let n = n.trim().parse::<u64>().map_err(|_| bad())?;
        rows.push((line_no, c, n));
    }
    if !in_body {
        return Err(Error::Parse {
            line: 0,
            message: "missing column header".into(),
        }
        .into());
    }

    let bin_width_ps: u64 = header.parse("bin_width_ps")?;
    let range_ps: u64 = header.parse("range_ps")?;
    let (mode_line, mode) = header.take("mode")?;
    let mode = match mode.as_str() {
        "pulsed" => Mode::Pulsed,
        "cw" => Mode::Cw,
        other => {
            return Err(Error::Parse {
                line: mode_line,
                message: format!("unknown mode `{other}`"),
            }
            .into())
        }
    };
    let (pol_line, pol) = header.take("polarization")?;
    let polarization = match pol.as_str() {
        "parallel" => Polarization::Parallel,
        "orthogonal" => Polarization::Orthogonal,
        other => {
            return Err(Error::Parse {
                line: pol_line,
                message: format!("unknown polarization `{other}`"),
            }
            .into())
        }
    };
    let coherence_time_ns = match header.take("coherence_time_ns")? {
        (_, v) if v == "none" => None,
        (line, v) => Some(v.parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("`coherence_time_ns`: cannot parse `{v}`"),
        })?),
    };
    let acquisition = Acquisition {
        mode,
        polarization,
        pulse_fwhm_ns: header.parse("pulse_fwhm_ns")?,
        frame_length_ns: header.parse("frame_length_ns")?,
        coherence_time_ns,
    };
    let mut h = CoincidenceHistogram::empty(bin_width_ps, range_ps, acquisition)?;
    h.range_rounded = header.parse("range_rounded")?;
    let total: u64 = header.parse("total_pairs")?;
    h.singles = [header.parse("singles_d1")?, header.parse("singles_d2")?];
    h.frames = header.parse("frames")?;
    if let Some((k, (line, _))) = header.values.into_iter().next() {
        return Err(Error::Parse {
            line,
            message: format!("unknown header key `{k}`"),
        }
        .into());
    }
    if h.range_ps != range_ps {
        return Err(Error::Binning(format!(
            "range {range_ps} ps is not a multiple of the bin width {bin_width_ps} ps"
        ))
        .into());
    }
    if rows.len() != h.counts.len() {
        return Err(Error::Binning(format!(
            "expected {} rows for this binning, found {}",
            h.counts.len(),
            rows.len()
        ))
        .into());
    }
    for (i, &(line, center, n)) in rows.iter().enumerate() {
        if center != h.bin_center_ps(i) {
            return Err(Error::Parse {
                line,
                message: format!("bin center {center} ps, expected {}", h.bin_center_ps(i)),
            }
            .into());
        }
        h.counts[i] = n;
    }
    h.total_pairs = h.counts.iter().sum();
    if h.total_pairs != total {
        return Err(Error::Parse {
            line: 0,
            message: format!("total_pairs = {total} but the rows sum to {}", h.total_pairs),
        }
        .into());
    }
    Ok((h, meta))
}

pub fn write_curve<W: Write>(mut w: W, lags_ns: &[f64], values: &[f64]) -> io::Result<()> {
    writeln!(w, "{CURVE_COLUMNS}")?;
    for (t, v) in lags_ns.iter().zip(values) {
        writeln!(w, "{t},{v}")?;
    }
    w.flush()
}

pub fn read_curve<R: BufRead>(r: R) -> Result<(Vec<f64>, Vec<f64>), FormatError> {
    let mut lags = Vec::new();
    let mut values = Vec::new();
    let mut seen_header = false;
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if !seen_header {
            if t != CURVE_COLUMNS {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected column header `{CURVE_COLUMNS}`"),
                }
                .into());
            }
            seen_header = true;
            continue;
        }
        let bad = || Error::Parse {
            line: line_no,
            message: format!("expected `lag_ns,value`, got `{t}`"),
        };
        let (a, b) = t.split_once(',').ok_or_else(bad)?;
        lags.push(a.trim().parse::<f64>().map_err(|_| bad())?);
        values.push(b.trim().parse::<f64>().map_err(|_| bad())?);
    }
    if !seen_header {
        return Err(Error::Parse {
            line: 0,
            message: "missing column header".into(),
        }
        .into());
    }
    Ok((lags, values))
}
