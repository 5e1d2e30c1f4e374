//! Event-stream files.
//!
//! Text form:
//!
//! ```text
//! # tpi-events v1
//! # mode = pulsed
//! # ...                      (remaining config keys)
//! # first_frame = 0
//! # frame_count = 1000
//! # @manifest_digest = ...   (free-form metadata, `@` prefix)
//! frame_index,detector,time_ps
//! 0,D2,249731
//! ```
//!
//! Binary form: the 16-byte header `b"TPIEVT\0\0"`, version `u32` LE, flags
//! `u32` LE; then a `u32` LE length and that many bytes of the same header
//! text (without `# ` prefixes); then a `u64` LE event count and 17 bytes per
//! event (`u64` frame, `u8` detector 1|2, `i64` time in ps, all LE).

use std::collections::BTreeMap;
use std::io::{self, BufRead, Read, Write};

use super::{DetectionEvent, Detector, EventStream, SimConfig};
use crate::error::Error;

pub const MAGIC: &[u8; 8] = b"TPIEVT\0\0";
pub const VERSION: u32 = 1;
const TEXT_BANNER: &str = "tpi-events v1";
const COLUMNS: &str = "frame_index,detector,time_ps";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Invalid(#[from] Error),
}

pub type Metadata = BTreeMap<String, String>;

fn header_lines(stream: &EventStream, meta: &Metadata) -> Vec<String> {
    let mut lines: Vec<String> = stream.config.to_kv_string().lines().map(str::to_owned).collect();
    lines.push(format!("first_frame = {}", stream.first_frame));
    lines.push(format!("frame_count = {}", stream.frame_count));
    for (k, v) in meta {
        lines.push(format!("@{k} = {v}"));
    }
    lines
}

fn parse_header(lines: &[(usize, String)]) -> Result<(SimConfig, u64, u64, Metadata), Error> {
    let mut config_text = String::new();
    let mut first_frame = None;
    let mut frame_count = None;
    let mut meta = Metadata::new();
    for (line_no, line) in lines {
        let parse_u64 = |v: &str| {
            v.trim().parse::<u64>().map_err(|_| Error::Parse {
                line: *line_no,
                message: format!("expected an integer, got `{}`", v.trim()),
            })
        };
        if let Some(rest) = line.strip_prefix('@') {
            let (k, v) = rest.split_once('=').ok_or_else(|| Error::Parse {
                line: *line_no,
                message: format!("expected `@key = value`, got `{line}`"),
            })?;
            meta.insert(k.trim().to_owned(), v.trim().to_owned());
        } else if let Some(v) = line.strip_prefix("first_frame =") {
            first_frame = Some(parse_u64(v)?);
        } else if let Some(v) = line.strip_prefix("frame_count =") {
            frame_count = Some(parse_u64(v)?);
        } else {
            config_text.push_str(line);
            config_text.push('\n');
        }
    }
    // Config parse errors report lines relative to the header block; remap them.
    let config = SimConfig::from_kv_str(&config_text).map_err(|e| match e {
        Error::Parse { line, message } => {
            let cfg_lines: Vec<usize> = lines
                .iter()
                .filter(|(_, l)| !l.starts_with('@') && !l.starts_with("first_frame") && !l.starts_with("frame_count"))
                .map(|(n, _)| *n)
                .collect();
            Error::Parse {
                line: cfg_lines.get(line - 1).copied().unwrap_or(line),
                message,
            }
        }
        other => other,
    })?;
    let frame_count = frame_count.unwrap_or(config.num_frames);
    Ok((config, first_frame.unwrap_or(0), frame_count, meta))
}

pub fn write_text<W: Write>(mut w: W, stream: &EventStream, meta: &Metadata) -> io::Result<()> {
    writeln!(w, "# {TEXT_BANNER}")?;
    for line in header_lines(stream, meta) {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "{COLUMNS}")?;
    for e in &stream.events {
        let d = match e.detector {
            Detector::D1 => "D1",
            Detector::D2 => "D2",
        };
        writeln!(w, "{},{},{}", e.frame_index, d, e.time_ps)?;
    }
    w.flush()
}

pub fn write_binary<W: Write>(mut w: W, stream: &EventStream, meta: &Metadata) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    let header = header_lines(stream, meta).join("\n");
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    w.write_all(&(stream.events.len() as u64).to_le_bytes())?;
    for e in &stream.events {
        w.write_all(&e.frame_index.to_le_bytes())?;
        w.write_all(&[e.detector.index() as u8 + 1])?;
        w.write_all(&e.time_ps.to_le_bytes())?;
    }
    w.flush()
}

fn finish(
    config: SimConfig,
    first_frame: u64,
    frame_count: u64,
    events: Vec<DetectionEvent>,
) -> Result<EventStream, Error> {
    let stream = EventStream::new(config, first_frame, frame_count, events);
    stream.validate()?;
    Ok(stream)
}

pub fn read_text<R: BufRead>(r: R) -> Result<(EventStream, Metadata), FormatError> {
    let mut header = Vec::new();
    let mut events = Vec::new();
    let mut parsed_header = None;
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if parsed_header.is_none() {
            if let Some(rest) = trimmed.strip_prefix('#') {
                let rest = rest.trim();
                if rest != TEXT_BANNER && !rest.is_empty() {
                    header.push((line_no, rest.to_owned()));
                }
                continue;
            }
            if trimmed != COLUMNS {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected column header `{COLUMNS}`"),
                }
                .into());
            }
            parsed_header = Some(parse_header(&header)?);
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            line: line_no,
            message: format!("{msg}: `{trimmed}`"),
        };
        let mut fields = trimmed.split(',');
        let (Some(f), Some(d), Some(t), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(bad("expected `frame_index,detector,time_ps`").into());
        };
        let frame_index = f.trim().parse::<u64>().map_err(|_| bad("bad frame index"))?;
        let detector = match d.trim() {
            "D1" => Detector::D1,
            "D2" => Detector::D2,
            _ => return Err(bad("detector must be D1 or D2").into()),
        };
        let time_ps = t.trim().parse::<i64>().map_err(|_| bad("bad time"))?;
        events.push(DetectionEvent {
            detector,
            time_ps,
            frame_index,
        });
    }
    let (config, first, count, meta) = parsed_header.ok_or_else(|| Error::Parse {
        line: 0,
        message: "missing column header".into(),
    })?;
    Ok((finish(config, first, count, events)?, meta))
}

pub fn read_binary<R: Read>(mut r: R) -> Result<(EventStream, Metadata), FormatError> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..8] != MAGIC {
        return Err(Error::Parse { line: 0, message: "bad magic".into() }.into());
    }
    let version = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Parse {
            line: 0,
            message: format!("unsupported binary version {version}"),
        }
        .into());
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut text = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| Error::Parse {
        line: 0,
        message: "header is not UTF-8".into(),
    })?;
    let lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_owned()))
        .collect();
    let (config, first, count, meta) = parse_header(&lines)?;
    let mut n = [0u8; 8];
    r.read_exact(&mut n)?;
    let n = u64::from_le_bytes(n);
    let mut events = Vec::with_capacity(n.min(1 << 24) as usize);
    let mut rec = [0u8; 17];
    for i in 0..n {
        r.read_exact(&mut rec)?;
        let detector = match rec[8] {
            1 => Detector::D1,
            2 => Detector::D2,
            other => {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("event {i}: bad detector byte {other}"),
                }
                .into())
            }
        };
        events.push(DetectionEvent {
            frame_index: u64::from_le_bytes(rec[..8].try_into().expect("8 bytes")),
            detector,
            time_ps: i64::from_le_bytes(rec[9..].try_into().expect("8 bytes")),
        });
    }
    Ok((finish(config, first, count, events)?, meta))
}

/// Reads either form, detected from the first bytes.
pub fn read_any<R: BufRead>(mut r: R) -> Result<(EventStream, Metadata), FormatError> {
    let is_binary = r.fill_buf()?.starts_with(MAGIC);
    if is_binary {
        read_binary(r)
    } else {
        read_text(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{run_pulsed, NoiseModel};
    use proptest::prelude::*;

    fn sample(seed: u64) -> EventStream {
        let c = SimConfig {
            num_frames: 3000,
            mean_photons_per_pulse: 0.5,
            noise: NoiseModel::Uniform { half_span_mhz: 2.5 },
            seed,
            ..SimConfig::default()
        };
        run_pulsed(&c).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn text_and_binary_round_trip(seed in any::<u64>()) {
            let s = sample(seed);
            let mut meta = Metadata::new();
            meta.insert("manifest_digest".into(), "abc".into());
            let mut text = Vec::new();
            write_text(&mut text, &s, &meta).unwrap();
            let (back, m) = read_any(&text[..]).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(&m, &meta);
            let mut bin = Vec::new();
            write_binary(&mut bin, &s, &meta).unwrap();
            let (back, m) = read_any(&bin[..]).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(m, meta);
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let s = sample(1);
        let mut text = Vec::new();
        write_text(&mut text, &s, &Metadata::new()).unwrap();
        let mut text = String::from_utf8(text).unwrap();
        text.push_str("12,D3,5\n");
        let expected_line = text.lines().count();
        match read_any(text.as_bytes()) {
            Err(FormatError::Invalid(Error::Parse { line, .. })) => assert_eq!(line, expected_line),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_header_key_is_rejected() {
        let text = "# tpi-events v1\n# mode = pulsed\n# bogus = 1\nframe_index,detector,time_ps\n";
        match read_any(text.as_bytes()) {
            Err(FormatError::Invalid(Error::Parse { line, message })) => {
                assert_eq!(line, 3);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
    }
}
