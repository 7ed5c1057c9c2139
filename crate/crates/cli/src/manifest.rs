use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nvq_core::data::{read_json, write_json};
use nvq_core::experiment::ExperimentConfig;

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const TOOL: &str = "nvq";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance record written next to every artifact a subcommand produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the full resolved configuration.
    pub config_hash: String,
    /// SHA-256 over the configuration entries this artifact depends on.
    pub stage_key: String,
    /// SHA-256 of every file in the directory, keyed by relative path.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn header(command: &str, config: &ExperimentConfig, stage_key: &str) -> Result<Self> {
        Ok(Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            seed: config.seed,
            config_hash: config_hash(config)?,
            stage_key: stage_key.into(),
            files: BTreeMap::new(),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

pub fn key_of(value: &serde_json::Value) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            let rel = path.strip_prefix(root).expect("walk stays under root");
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(rel, sha256_hex(&fs::read(&path)?));
        }
    }
    Ok(())
}

/// Hashes the directory's files and writes its manifest.
pub fn seal(dir: &Path, mut header: Manifest) -> Result<Manifest> {
    header.files.clear();
    collect(dir, dir, &mut header.files)?;
    write_json(dir.join(MANIFEST), &header)?;
    Ok(header)
}

/// Reads the manifest of an upstream artifact and checks it was produced for `stage_key`.
pub fn require(dir: &Path, stage_key: &str, producer: &'static str) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::Missing {
            path: dir.display().to_string(),
            producer,
        });
    }
    let m: Manifest = read_json(&path)?;
    if m.stage_key != stage_key {
        return Err(CliError::Stale {
            path: dir.display().to_string(),
            producer,
        });
    }
    Ok(m)
}

/// Empties (or creates) an output directory.
pub fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}
