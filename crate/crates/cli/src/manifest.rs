use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Wall-clock information; the only part of an output that varies between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix: u64,
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Configuration actually used, after defaults and overrides.
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by the path given on the command line.
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// Seeds drawn because none was supplied.
    pub generated_seeds: Vec<String>,
    pub timestamp: Timing,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    started_unix: u64,
    inputs: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    generated: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            generated: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    /// Records `given`, or draws and records a fresh seed.
    pub fn seed(&mut self, name: &str, given: Option<u64>) -> u64 {
        let seed = given.unwrap_or_else(|| {
            self.generated.push(name.to_string());
            rand::random()
        });
        self.seeds.insert(name.to_string(), seed);
        seed
    }

    pub fn finish<C: Serialize>(self, config: &C) -> RunManifest {
        RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: self.inputs,
            seeds: self.seeds,
            generated_seeds: self.generated,
            timestamp: Timing {
                started_unix: self.started_unix,
                duration_seconds: self.started.elapsed().as_secs_f64(),
            },
        }
    }
}
