use std::fs;
use std::path::{Path, PathBuf};

use mvf_core::snapshot::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{to_toml, RunConfig};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    // no "-0" in reports
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

/// Builds a CSV in memory; [`Csv::save`] writes it atomically.
pub struct Csv {
    w: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Csv { w }
    }

    pub fn row(&mut self, values: &[f64]) {
        self.w
            .write_record(values.iter().map(|v| num(*v)))
            .expect("in-memory write");
    }

    pub fn save(self, path: &Path) -> std::io::Result<()> {
        let bytes = self.w.into_inner().map_err(|e| e.into_error())?;
        write_atomic(path, &bytes).map_err(std::io::Error::other)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    CheckFailed,
    NotConverged,
    SolverFailure,
    InputError,
    IoError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the effective configuration in canonical TOML form, with
    /// the output directory left out.
    pub config_hash: String,
    pub seed: u64,
    /// RFC 3339 UTC.
    pub started: String,
    pub finished: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output.directory.clear();
    Sha256::digest(to_toml(&c).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Collects artifact paths as they are written.
pub struct Artifacts {
    root: PathBuf,
    list: Vec<String>,
}

impl Artifacts {
    pub fn new(root: PathBuf) -> Self {
        Artifacts { root, list: Vec::new() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn add(&mut self, name: &str) {
        if !self.list.iter().any(|n| n == name) {
            self.list.push(name.to_string());
        }
    }

    pub fn csv(&mut self, name: &str, csv: Csv) -> std::io::Result<()> {
        csv.save(&self.path(name))?;
        self.add(name);
        Ok(())
    }

    /// Writes `manifest.json`, listing only artifacts that exist.
    pub fn finish(mut self, mut manifest: RunManifest) -> std::io::Result<()> {
        let root = self.root.clone();
        self.list.retain(|n| root.join(n).exists());
        manifest.artifacts = self.list;
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::create_dir_all(&self.root)?;
        write_atomic(&self.root.join("manifest.json"), &json).map_err(std::io::Error::other)
    }
}
