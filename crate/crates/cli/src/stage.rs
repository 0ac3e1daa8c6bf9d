//! Stage records: every stage directory holds `stage.json` with the resolved
//! config, the digests of the upstream outputs it consumed, and the SHA-256
//! of every file it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const RECORD_FILE: &str = "stage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub stage: String,
    pub tool: String,
    /// The config fields this stage's outputs depend on.
    pub fingerprint: serde_json::Value,
    pub config: PipelineConfig,
    /// Upstream stage directory → digest of its recorded outputs.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output root → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl StageRecord {
    /// One digest over all recorded outputs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (path, hash) in &self.outputs {
            h.update(path.as_bytes());
            h.update([0]);
            h.update(hash.as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The output root plus the `--force` policy.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub force: bool,
}

impl Workspace {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn create_dir(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p).map_err(CliError::io(&p))?;
        Ok(p)
    }

    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        fs::write(&p, contents).map_err(CliError::io(&p))
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
        self.write(rel, text + "\n")
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str, command: &'static str) -> CliResult<T> {
        let p = self.path(rel);
        let text = fs::read_to_string(&p).map_err(|_| CliError::Missing { command, path: p.clone() })?;
        serde_json::from_str(&text).map_err(|e| CliError::Core(bodymesh::Error::Format(format!("{}: {e}", p.display()))))
    }

    /// Load the record of an upstream stage, check that the current config
    /// still matches what that stage consumed, and re-hash its outputs.
    pub fn require(
        &self,
        command: &'static str,
        stage_dir: &str,
        fingerprint: &serde_json::Value,
    ) -> CliResult<StageRecord> {
        let rel = format!("{stage_dir}/{RECORD_FILE}");
        let record: StageRecord = self.read_json(&rel, command)?;
        if self.force {
            return Ok(record);
        }
        if &record.fingerprint != fingerprint {
            return Err(CliError::Stale { command, path: self.path(&rel) });
        }
        for (path, hash) in &record.outputs {
            let p = self.path(path);
            if !p.exists() {
                return Err(CliError::Missing { command, path: p });
            }
            if &sha256_file(&p)? != hash {
                return Err(CliError::Stale { command, path: p });
            }
        }
        Ok(record)
    }

    /// Hash `outputs` and write `<stage_dir>/stage.json`.
    pub fn record(
        &self,
        stage_dir: &str,
        config: &PipelineConfig,
        fingerprint: serde_json::Value,
        upstream: &[(&str, &StageRecord)],
        outputs: impl IntoIterator<Item = String>,
    ) -> CliResult<StageRecord> {
        let mut hashed = BTreeMap::new();
        for rel in outputs {
            let hash = sha256_file(&self.path(&rel))?;
            hashed.insert(rel, hash);
        }
        let record = StageRecord {
            stage: stage_dir.to_string(),
            tool: format!("bodymesh {}", env!("CARGO_PKG_VERSION")),
            fingerprint,
            config: config.clone(),
            inputs: upstream.iter().map(|(dir, r)| (dir.to_string(), r.digest())).collect(),
            outputs: hashed,
        };
        self.write_json(&format!("{stage_dir}/{RECORD_FILE}"), &record)?;
        Ok(record)
    }
}
