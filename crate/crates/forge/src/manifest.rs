use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::formats::write_atomic;

pub const FILE_NAME: &str = "manifest.json";

/// Record of one command run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, enough to replay the run.
    pub argv: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub inputs: Vec<String>,
    /// Paths relative to the output directory, sorted.
    pub outputs: Vec<String>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl RunManifest {
    pub fn start(command: &str, argv: &[String], seed: u64) -> Self {
        Self {
            command: command.into(),
            argv: argv.to_vec(),
            config_hash: String::new(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path, mut outputs: Vec<String>) -> Result<()> {
        outputs.sort();
        self.outputs = outputs;
        self.finished_unix_ms = now_ms();
        write_atomic(&dir.join(FILE_NAME), &serde_json::to_vec_pretty(&self)?)
    }
}
