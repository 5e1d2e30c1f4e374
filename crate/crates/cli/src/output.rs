//! Atomic file output, input digests and run manifests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tpi_core::SimConfig;

use crate::CliError;

pub const TOOL_VERSION: &str = concat!("tpi ", env!("CARGO_PKG_VERSION"));

/// Writes through a temporary file in the target directory and renames it
/// into place once `body` succeeds.
pub fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<&mut File>) -> io::Result<()>,
) -> Result<(), CliError> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)?;
    }
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut r = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// `<path>.<suffix>`, e.g. `run.txt` → `run.txt.manifest.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub config: Option<SimConfig>,
    pub seed: Option<u64>,
    pub parameters: BTreeMap<String, String>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub duration_s: f64,
    /// Hash of everything that determines the outputs: subcommand, resolved
    /// config, seed, parameters, input contents and tool version. Paths,
    /// timing and worker count are left out.
    pub digest: String,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_owned(),
            config_path: None,
            config: None,
            seed: None,
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: TOOL_VERSION.to_owned(),
            duration_s: 0.0,
            digest: String::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.parameters.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<String, CliError> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            sha256: sha256.clone(),
        });
        Ok(sha256)
    }

    /// Fixes the digest; call after all inputs and parameters are recorded.
    pub fn seal(&mut self) -> String {
        let mut h = Sha256::new();
        let mut field = |k: &str, v: &str| {
            h.update(k.as_bytes());
            h.update([0u8]);
            h.update(v.as_bytes());
            h.update([0xffu8]);
        };
        field("subcommand", &self.subcommand);
        field("tool_version", &self.tool_version);
        if let Some(c) = &self.config {
            field("config", &c.to_kv_string());
        }
        if let Some(s) = self.seed {
            field("seed", &s.to_string());
        }
        for (k, v) in &self.parameters {
            field(k, v);
        }
        for i in &self.inputs {
            field("input", &i.sha256);
        }
        self.digest = hex::encode(h.finalize());
        self.digest.clone()
    }

    pub fn finish(&mut self, elapsed: Duration, outputs: Vec<PathBuf>, path: &Path) -> Result<(), CliError> {
        self.duration_s = elapsed.as_secs_f64();
        self.outputs = outputs;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(path, |w| writeln!(w, "{json}"))
    }
}
