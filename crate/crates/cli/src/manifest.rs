//! Run manifests: the resolved command, hashes of what it read and of
//! what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::RunCommand;

pub const RUN_MANIFEST: &str = "run-manifest.json";
pub const TOOL_VERSION: &str = concat!("nbend ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Arguments with every path made absolute.
    pub run: RunCommand,
    /// Absolute input path → sha256.
    pub inputs: BTreeMap<PathBuf, String>,
    /// Artifact path relative to the output directory → sha256.
    pub artifacts: BTreeMap<PathBuf, String>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Collects input and artifact hashes while a command runs.
#[derive(Debug)]
pub struct Recorder {
    out: PathBuf,
    inputs: BTreeMap<PathBuf, String>,
    artifacts: BTreeMap<PathBuf, String>,
}

impl Recorder {
    pub fn new(out: &Path) -> Self {
        Recorder {
            out: out.to_path_buf(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.to_path_buf(), sha256_file(path)?);
        Ok(())
    }

    /// Every regular file directly inside `dir`, except a run manifest.
    pub fn input_dir(&mut self, dir: &Path) -> Result<()> {
        let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
        for e in entries {
            let path = e?.path();
            if path.is_file() && path.file_name().is_some_and(|n| n != RUN_MANIFEST) {
                self.input(&path)?;
            }
        }
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(&self.out).unwrap_or(path).to_path_buf();
        self.artifacts.insert(rel, sha256_file(path)?);
        Ok(())
    }

    pub fn finish(self, run: RunCommand) -> RunManifest {
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            run,
            inputs: self.inputs,
            artifacts: self.artifacts,
        }
    }
}

/// Fail if any recorded input no longer hashes the same.
pub fn check_inputs(manifest: &RunManifest) -> Result<()> {
    for (path, want) in &manifest.inputs {
        let got = sha256_file(path).with_context(|| format!("input {} is gone", path.display()))?;
        if &got != want {
            bail!("input {} changed since the recorded run", path.display());
        }
    }
    Ok(())
}

/// Artifact paths whose hashes differ between two runs, or that only one
/// run wrote.
pub fn artifact_differences(a: &RunManifest, b: &RunManifest) -> Vec<PathBuf> {
    let mut diff: Vec<PathBuf> = a
        .artifacts
        .iter()
        .filter(|(p, h)| b.artifacts.get(*p) != Some(h))
        .map(|(p, _)| p.clone())
        .collect();
    diff.extend(b.artifacts.keys().filter(|p| !a.artifacts.contains_key(*p)).cloned());
    diff
}
