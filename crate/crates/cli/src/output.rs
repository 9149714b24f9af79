//! Result files and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use see_lab_core::ergodicity::Verdict;
use sha2::{Digest, Sha256};

/// A result file produced in memory by an experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl OutputFile {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self { name: name.into(), bytes: bytes.into() }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Everything recorded about one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: String,
    pub config_sha256: String,
    pub version: String,
    pub base_seed: u64,
    pub n_paths: usize,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    /// `(file name, sha256)` in write order.
    pub files: Vec<(String, String)>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "subcommand = {}", self.subcommand);
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "config = {}", self.config_path);
        let _ = writeln!(s, "config_sha256 = {}", self.config_sha256);
        let _ = writeln!(s, "base_seed = {}", self.base_seed);
        let _ = writeln!(s, "n_paths = {}", self.n_paths);
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "wall_clock_seconds = {:.3}", self.wall_clock_seconds);
        let _ = writeln!(s, "status = {}", if self.passed() { "pass" } else { "fail" });
        for (name, hash) in &self.files {
            let _ = writeln!(s, "file {name} sha256={hash}");
        }
        for v in &self.verdicts {
            let _ = writeln!(
                s,
                "verdict {} {} margin={:e}",
                v.name,
                if v.passed { "PASS" } else { "FAIL" },
                v.margin
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning {w}");
        }
        s
    }
}
