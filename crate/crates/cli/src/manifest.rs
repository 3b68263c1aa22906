//! Run manifests: every setting in force, input digests, tool version and timing.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// Every resolved setting, defaults included.
    pub settings: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub wall_clock_seconds: f64,
    pub step_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            ..Default::default()
        }
    }

    /// Records a setting and logs it.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        log::info!("setting {key} = {value}");
        self.settings.insert(key.to_string(), value);
    }

    /// Records the SHA-256 digest of an input file.
    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        let mut file = std::fs::File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 1 << 16];
        loop {
            let read = file.read(&mut buf).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            if read == 0 {
                break;
            }
            hasher.update(&buf[..read]);
        }
        let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn add_timing(&mut self, seconds: &BTreeMap<String, f64>) {
        for (k, v) in seconds {
            *self.step_seconds.entry(k.clone()).or_default() += v;
        }
    }
}
