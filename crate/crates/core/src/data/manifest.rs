use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_fpc, read_tsm, write_fpc, write_tsm, Configuration, FormatError};
use crate::error::{Error, Result};
use crate::oracle::OracleParams;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub field: String,
    pub mesh: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<OracleParams>,
}

/// Index of a configuration directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub configurations: Vec<ManifestEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Writes `<id>.fpc`, `<id>.tsm` per configuration and the manifest.
pub fn save_configurations(dir: &Path, configs: &[Configuration], metadata: serde_json::Value) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(configs.len());
    for c in configs {
        if c.id.is_empty() || c.id.contains(['/', '\\']) || c.id.starts_with('.') {
            return Err(Error::input(format!("configuration id {:?} is not a plain file stem", c.id)));
        }
        let field = format!("{}.fpc", c.id);
        let mesh = format!("{}.tsm", c.id);
        write_fpc(&dir.join(&field), &c.field)?;
        write_tsm(&dir.join(&mesh), &c.mesh)?;
        entries.push(ManifestEntry { id: c.id.clone(), field, mesh, theta: c.theta });
    }
    let manifest = Manifest { version: 1, configurations: entries, metadata };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| FormatError::Header(e.to_string()))?;
    atomic_write(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let bytes = std::fs::read(dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| FormatError::Header(e.to_string()))?;
    if m.version != 1 {
        return Err(FormatError::VersionMismatch { found: m.version, expected: 1 }.into());
    }
    Ok(m)
}

pub fn load_configurations(dir: &Path) -> Result<Vec<Configuration>> {
    let m = read_manifest(dir)?;
    if m.configurations.is_empty() {
        return Err(Error::input(format!("{} lists no configurations", dir.display())));
    }
    m.configurations
        .iter()
        .map(|e| {
            if let Some(t) = &e.theta {
                t.validate()?;
            }
            Ok(Configuration {
                id: e.id.clone(),
                field: read_fpc(&dir.join(&e.field))?,
                mesh: read_tsm(&dir.join(&e.mesh))?,
                theta: e.theta,
            })
        })
        .collect()
}
