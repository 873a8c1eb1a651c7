use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: Option<u64>,
    pub versions: BTreeMap<&'static str, &'static str>,
    pub config: &'a RunConfig,
    /// Relative path to SHA-256 of every file in the run directory.
    pub artifacts: BTreeMap<String, String>,
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            hash_tree(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("walked from root");
        if rel == Path::new(MANIFEST_FILE) {
            continue;
        }
        let digest = Sha256::digest(std::fs::read(&path)?);
        out.insert(rel.to_string_lossy().replace('\\', "/"), hex::encode(digest));
    }
    Ok(())
}

/// Echoes the effective config and writes the manifest last, so the hashes
/// cover every artifact including the echo.
pub fn finish(dir: &Path, command: &str, seed: Option<u64>, config: &RunConfig) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Runtime(format!("{}: {e}", dir.display()));
    std::fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config).expect("config serializes"))
        .map_err(io)?;
    let mut artifacts = BTreeMap::new();
    hash_tree(dir, dir, &mut artifacts).map_err(io)?;
    let manifest = Manifest {
        command,
        seed,
        versions: BTreeMap::from([("hmgn", hmgn::VERSION), ("hmgn-cli", env!("CARGO_PKG_VERSION"))]),
        config,
        artifacts,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(io)
}
