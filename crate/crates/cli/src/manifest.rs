//! The output directory and its manifest: every artifact written by a stage
//! is recorded with its SHA-256, alongside the config hash, the stage's
//! input files and its seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Input file path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// Artifact name → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    /// Every artifact with its hash, across stages.
    pub fn files(&self) -> BTreeMap<&str, &str> {
        self.stages
            .values()
            .flat_map(|s| s.outputs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An output directory opened for one stage.
pub struct Workspace {
    dir: PathBuf,
    manifest: Manifest,
    stage: &'static str,
    record: StageRecord,
}

impl Workspace {
    /// Starts a fresh run: artifacts listed by an earlier manifest are
    /// removed so stale files cannot mix with new ones.
    pub fn fresh(dir: &Path, config_hash: &str, stage: &'static str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        if let Ok(old) = read_manifest(dir) {
            for name in old.files().keys() {
                let p = dir.join(name);
                if p.exists() {
                    fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
                }
            }
        }
        let manifest = Manifest { config_hash: config_hash.to_string(), stages: BTreeMap::new() };
        Ok(Workspace { dir: dir.to_path_buf(), manifest, stage, record: StageRecord::default() })
    }

    /// Continues a run; refuses when earlier stages used another config.
    pub fn resume(dir: &Path, config_hash: &str, stage: &'static str) -> Result<Self, CliError> {
        let manifest = read_manifest(dir).map_err(|_| CliError::MissingArtifact {
            stage,
            artifact: dir.join(MANIFEST).display().to_string(),
            producer: "ingest",
        })?;
        if manifest.config_hash != config_hash {
            return Err(CliError::ConfigMismatch {
                current: config_hash.to_string(),
                recorded: manifest.config_hash,
                dir: dir.display().to_string(),
            });
        }
        Ok(Workspace { dir: dir.to_path_buf(), manifest, stage, record: StageRecord::default() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Reads an artifact, checking it against the manifest.
    pub fn read(&self, name: &str, producer: &'static str) -> Result<Vec<u8>, CliError> {
        let missing =
            || CliError::MissingArtifact { stage: self.stage, artifact: name.to_string(), producer };
        let recorded = self.manifest.stages.get(producer).and_then(|s| s.outputs.get(name)).ok_or_else(missing)?;
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|_| missing())?;
        if &sha256_hex(&bytes) != recorded {
            return Err(CliError::Tampered(name.to_string()));
        }
        Ok(bytes)
    }

    pub fn read_string(&self, name: &str, producer: &'static str) -> Result<String, CliError> {
        String::from_utf8(self.read(name, producer)?)
            .map_err(|_| CliError::Data(format!("artifact `{name}` is not UTF-8")))
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&self, name: &str, producer: &'static str) -> Result<T, CliError> {
        serde_json::from_slice(&self.read(name, producer)?)
            .map_err(|e| CliError::Data(format!("artifact `{name}`: {e}")))
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Records an input file's hash.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.record.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.record.seeds.insert(name.to_string(), value);
    }

    /// Stores the stage record and rewrites the manifest.
    pub fn commit(mut self) -> Result<Manifest, CliError> {
        self.manifest.stages.insert(self.stage.to_string(), std::mem::take(&mut self.record));
        let path = self.dir.join(MANIFEST);
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
