//! Output formatting and run manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use polybranch::stats::Histogram;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Fixed-point decimal with 12 significant digits.
pub fn sig12(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return format!("{:.11}", 0.0);
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (11 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Units block embedded in every JSON document.
pub fn units() -> Value {
    serde_json::json!({
        "length": "sigma (bead diameter)",
        "time": "steps for brw/bcrw/gbrw; model time units for bbm",
        "path_length": "bonds",
    })
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_left,bin_right,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{c}", sig12(h.edges[i]), sig12(h.edges[i + 1]));
    }
    out
}

pub struct MeanRow {
    pub q_x: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn means_csv(rows: &[MeanRow]) -> String {
    let mut out = String::from("q_x,mean,std,n\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", sig12(r.q_x), sig12(r.mean), sig12(r.std), r.n);
    }
    out
}

/// Tag for per-offset file names, e.g. `16.375`.
pub fn q_tag(q: f64) -> String {
    format!("{q}")
}

pub struct OutDir {
    pub root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn finish(mut self, manifest: RunManifest) -> Result<(), CliError> {
        let mut m = manifest;
        m.outputs = std::mem::take(&mut self.written);
        self.write_json(MANIFEST_FILE, &m)
    }
}

/// Everything needed to reproduce a run: `polybranch replay manifest.json`
/// re-executes `argv` with only the output directory replaced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: &[String], seed: Option<u64>, config: Value) -> Self {
        Self {
            tool: "polybranch".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            argv: argv.to_vec(),
            seed,
            config,
            outputs: Vec::new(),
        }
    }
}
