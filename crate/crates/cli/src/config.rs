//! On-disk configuration for the harness: a roster of identities to
//! enroll and the trial protocol the channels will enforce.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use trialmesh_core::identity::Role;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
pub struct NetworkConfig {
    pub roster: Vec<RosterEntry>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RosterEntry {
    pub id: String,
    pub role: Role,
    #[serde(default)]
    pub site_id: Option<String>,
}

impl NetworkConfig {
    pub fn roster_tuples(&self) -> Vec<(String, Role, Option<String>)> {
        self.roster.iter().map(|e| (e.id.clone(), e.role, e.site_id.clone())).collect()
    }
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|err| CliError::Json { path: path.display().to_string(), err })
}
