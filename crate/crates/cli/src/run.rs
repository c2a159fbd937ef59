//! Run manifests, fingerprints and output-path plumbing shared by every subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run.json";
pub const TIMING_FILE: &str = "timing.json";
pub const OUTPUT_ROOT_VAR: &str = "SGIL_OUTPUT_ROOT";

/// Relative output paths are placed under `$SGIL_OUTPUT_ROOT` when it is set.
pub fn output_dir(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over `(name, length, contents)` of each file, in the order given.
pub fn fingerprint_files(dir: &Path, names: &[String]) -> Result<String> {
    let mut h = Sha256::new();
    for name in names {
        let path = dir.join(name);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Fingerprint of a prepared dataset directory: every file its manifest lists.
pub fn dataset_fingerprint(dir: &Path) -> Result<String> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: sgil::data::SnapshotManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    fingerprint_files(dir, &manifest.files)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub dataset_fingerprint: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    /// Paths relative to the output directory, including this manifest.
    pub outputs: Vec<String>,
    pub timing: String,
}

#[derive(Debug, Serialize)]
struct Timing {
    started_unix_ms: u128,
    finished_unix_ms: u128,
    elapsed_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub struct RunRecorder {
    command: String,
    dir: PathBuf,
    started: u128,
    outputs: Vec<String>,
}

impl RunRecorder {
    pub fn start(command: &str, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            command: command.into(),
            dir: dir.to_path_buf(),
            started: now_ms(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Registers an output given as an absolute path inside the directory or a relative name.
    pub fn produced(&mut self, path: impl AsRef<Path>) {
        let p = path.as_ref();
        let rel = p.strip_prefix(&self.dir).unwrap_or(p);
        let name = rel.to_string_lossy().replace('\\', "/");
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
    }

    pub fn write(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.produced(&path);
        Ok(path)
    }

    /// Writes `run.json` and `timing.json`. Everything except the timing
    /// file is a pure function of the inputs.
    pub fn finish(
        mut self,
        config_hash: String,
        dataset_fingerprint: Option<String>,
        seeds: BTreeMap<String, u64>,
        inputs: BTreeMap<String, String>,
    ) -> Result<()> {
        let finished = now_ms();
        let timing = Timing {
            started_unix_ms: self.started,
            finished_unix_ms: finished,
            elapsed_ms: finished.saturating_sub(self.started),
        };
        self.write(
            TIMING_FILE,
            &(serde_json::to_string_pretty(&timing)? + "\n"),
        )?;
        self.produced(RUN_MANIFEST);
        let mut outputs = self.outputs.clone();
        outputs.sort();
        let manifest = RunManifest {
            command: self.command.clone(),
            version: format!("sgil {}", env!("CARGO_PKG_VERSION")),
            config_hash,
            dataset_fingerprint,
            seeds,
            inputs,
            outputs,
            timing: TIMING_FILE.into(),
        };
        self.write(
            RUN_MANIFEST,
            &(serde_json::to_string_pretty(&manifest)? + "\n"),
        )?;
        Ok(())
    }
}
