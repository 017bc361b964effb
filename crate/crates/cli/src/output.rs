//! Artifact files of one run and the manifest describing them.

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use grl::report::{emit_csv, Cell};

/// Writes files named `<command>[-<tag>]_seed<seed><suffix>` into one directory and
/// hashes the configuration together with every input file read.
pub struct Output {
    dir: PathBuf,
    stem: String,
    files: Vec<String>,
    inputs: Sha256,
}

impl Output {
    pub fn new(dir: &Path, command: &str, tag: Option<&str>, seed: u64, canonical: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let mut inputs = Sha256::new();
        inputs.update(canonical.as_bytes());
        Ok(Output {
            dir: dir.to_path_buf(),
            stem: match tag {
                Some(t) => format!("{command}-{t}_seed{seed}"),
                None => format!("{command}_seed{seed}"),
            },
            files: Vec::new(),
            inputs,
        })
    }

    /// Reads an input file and folds its name and bytes into the inputs hash.
    pub fn read_input(&mut self, path: &Path) -> Result<String> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.update(path.to_string_lossy().as_bytes());
        self.inputs.update([0u8]);
        self.inputs.update(text.as_bytes());
        Ok(text)
    }

    fn path(&mut self, suffix: &str) -> PathBuf {
        let name = format!("{}{suffix}", self.stem);
        let path = self.dir.join(&name);
        self.files.push(name);
        path
    }

    pub fn csv(&mut self, suffix: &str, schema: &[&str], rows: &[Vec<Cell>]) -> Result<PathBuf> {
        let path = self.path(&format!("{suffix}.csv"));
        emit_csv(rows, schema, &path).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, suffix: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(&format!("{suffix}.json"), &text)
    }

    pub fn text(&mut self, suffix: &str, content: &str) -> Result<PathBuf> {
        let path = self.path(suffix);
        std::fs::write(&path, content).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn inputs_sha256(&self) -> String {
        let digest = self.inputs.clone().finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `<stem>_manifest.json` and returns its text.
    pub fn finish(mut self, command: &str, seed: u64, started: SystemTime, wall: Duration) -> Result<String> {
        let manifest = Manifest {
            command: command.to_string(),
            seed,
            inputs_sha256: self.inputs_sha256(),
            versions: Versions { grl_cli: env!("CARGO_PKG_VERSION"), grl_core: grl::VERSION },
            outputs: self.files.clone(),
            started_unix_s: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_s: wall.as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.path("_manifest.json");
        std::fs::write(&path, &text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(text)
    }
}

#[derive(Serialize)]
struct Versions {
    #[serde(rename = "grl-cli")]
    grl_cli: &'static str,
    #[serde(rename = "grl-core")]
    grl_core: &'static str,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    seed: u64,
    inputs_sha256: String,
    versions: Versions,
    outputs: Vec<String>,
    started_unix_s: u64,
    wall_time_s: f64,
}
