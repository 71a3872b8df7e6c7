use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Which command produced an artifact, under which config, from which inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub command: String,
    pub config_sha256: String,
    /// Input artifact name to its SHA-256.
    pub inputs: BTreeMap<String, String>,
}

/// Serialize `body` as a JSON object with a `provenance` key added.
pub fn stamped_json<T: Serialize>(body: &T, provenance: &Provenance) -> CliResult<Vec<u8>> {
    let mut value = serde_json::to_value(body).map_err(internal)?;
    let Value::Object(map) = &mut value else {
        return Err(CliError::Internal("stamped artifact body must be a JSON object".into()));
    };
    map.insert("provenance".into(), serde_json::to_value(provenance).map_err(internal)?);
    pretty(&value)
}

/// Split a stamped artifact into its provenance and the body's JSON text.
pub fn read_stamped(path: &Path) -> CliResult<(Provenance, String)> {
    let bytes = read_bytes(path)?;
    let mut value: Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))?;
    let provenance = value
        .as_object_mut()
        .and_then(|m| m.remove("provenance"))
        .ok_or_else(|| CliError::Model(format!("{} has no provenance", path.display())))?;
    let provenance: Provenance =
        serde_json::from_value(provenance).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))?;
    Ok((provenance, value.to_string()))
}

pub fn read_stamped_as<T: DeserializeOwned>(path: &Path) -> CliResult<(Provenance, T)> {
    let (p, body) = read_stamped(path)?;
    let t = serde_json::from_str(&body).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))?;
    Ok((p, t))
}

pub fn pretty<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(internal)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sha256: String,
    pub command: String,
    pub config_sha256: String,
}

pub type Manifest = BTreeMap<String, ManifestEntry>;

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(Manifest::new());
    }
    serde_json::from_slice(&read_bytes(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Outputs of one command, held in memory and written together at the end
/// so a failed command leaves no partial artifacts.
pub struct Outputs {
    dir: PathBuf,
    command: String,
    config_sha256: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path, command: &str, config_sha256: &str) -> Self {
        Outputs { dir: dir.to_path_buf(), command: command.into(), config_sha256: config_sha256.into(), files: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn provenance(&self, inputs: BTreeMap<String, String>) -> Provenance {
        Provenance { command: self.command.clone(), config_sha256: self.config_sha256.clone(), inputs }
    }

    /// Write every file via a temporary name and rename, then update the
    /// manifest and clear any failure marker for this command.
    pub fn commit(self) -> CliResult<()> {
        let io = |e: std::io::Error| CliError::Internal(format!("writing to {}: {e}", self.dir.display()));
        fs::create_dir_all(&self.dir).map_err(io)?;
        let mut manifest = read_manifest(&self.dir)?;
        for (name, bytes) in &self.files {
            atomic_write(&self.dir.join(name), bytes).map_err(io)?;
            manifest.insert(
                name.clone(),
                ManifestEntry {
                    sha256: sha256_hex(bytes),
                    command: self.command.clone(),
                    config_sha256: self.config_sha256.clone(),
                },
            );
        }
        atomic_write(&self.dir.join(MANIFEST), &pretty(&manifest)?).map_err(io)?;
        let marker = failure_marker(&self.dir, &self.command);
        if marker.exists() {
            fs::remove_file(marker).map_err(io)?;
        }
        Ok(())
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn failure_marker(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}.failed"))
}

/// Best effort: a marker that cannot be written must not mask the error.
pub fn write_failure_marker(dir: &Path, command: &str, error: &CliError) {
    if fs::create_dir_all(dir).is_ok() {
        let _ = fs::write(failure_marker(dir, command), format!("{error}\n"));
    }
}
