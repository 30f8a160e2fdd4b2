//! Run manifests: what ran, on which inputs, and what it produced.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Command;
use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config: ExperimentConfig,
    pub seed: u64,
    /// SHA-256 of every input file, keyed by path as given.
    pub input_digests: BTreeMap<String, String>,
    /// Output paths relative to the output directory, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub toolkit_version: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn write(&self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Fails when an input file changed since the run.
    pub fn check_inputs(&self) -> anyhow::Result<()> {
        for (path, expected) in &self.input_digests {
            let found = sha256_file(Path::new(path)).with_context(|| format!("re-reading input {path}"))?;
            if &found != expected {
                bail!("input {path} changed since the recorded run");
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let k = file.read(&mut buf)?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Digests of `relative` paths under `out_dir`.
pub fn digest_outputs(out_dir: &Path, relative: &[String]) -> anyhow::Result<BTreeMap<String, String>> {
    relative
        .iter()
        .map(|r| {
            let d = sha256_file(&out_dir.join(r)).with_context(|| format!("hashing output {r}"))?;
            Ok((r.clone(), d))
        })
        .collect()
}

/// Outputs whose digests differ between two runs, plus any present in only one.
pub fn compare_outputs(expected: &BTreeMap<String, String>, found: &BTreeMap<String, String>) -> Vec<String> {
    let mut bad: Vec<String> = expected
        .iter()
        .filter(|(k, v)| found.get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    bad.extend(found.keys().filter(|k| !expected.contains_key(*k)).cloned());
    bad
}
