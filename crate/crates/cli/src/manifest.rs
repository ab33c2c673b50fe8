//! Run manifests: written before a command starts and completed when it ends.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::util::file_hash;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_path: Option<PathBuf>,
    /// Every setting after merging flags, config file and defaults.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Input file -> git-style sha256 blob hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to `output_dir`) -> hash; filled when the run ends.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn hash_inputs(paths: &[PathBuf]) -> anyhow::Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((p.display().to_string(), file_hash(p)?))).collect()
}

/// Hashes of every file under `dir` except the manifest, keyed by relative path.
pub fn hash_outputs(dir: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path != dir.join(MANIFEST_FILE) {
                let rel = path.strip_prefix(dir)?.to_string_lossy().replace('\\', "/");
                out.insert(rel, file_hash(&path)?);
            }
        }
    }
    Ok(out)
}
