//! `manifest.json`: what ran, with which settings, on which inputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::Settings;

pub const FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub config: BTreeMap<String, Value>,
    /// Input path -> SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Facts discovered while running, such as the fused input width.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(command: &str, settings: &Settings, inputs: &[PathBuf]) -> anyhow::Result<Manifest> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.display().to_string(), sha256_file(p)?);
        }
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed: settings.seed,
            config: settings.flatten(),
            inputs: digests,
            outputs: Vec::new(),
            details: BTreeMap::new(),
        })
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details.insert(key.to_string(), serde_json::to_value(value).expect("detail serializes"));
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join(FILE), text + "\n").with_context(|| format!("writing manifest in {}", dir.display()))
    }
}
