//! Run manifests: every command writes one alongside its outputs so a
//! published result is self-describing (resolved configuration, seed, tool
//! version, stage timings).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub inputs: Vec<String>,
    /// Fully resolved configuration, defaults materialized.
    pub config: serde_json::Value,
    pub seed: u64,
    pub timings_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: Vec<String>, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            config,
            seed,
            timings_seconds: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

/// Accumulates per-stage wall-clock timings.
pub struct Stopwatch {
    last: Instant,
    laps: BTreeMap<String, f64>,
}

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch {
            last: Instant::now(),
            laps: BTreeMap::new(),
        }
    }

    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        *self.laps.entry(stage.to_string()).or_insert(0.0) +=
            now.duration_since(self.last).as_secs_f64();
        self.last = now;
    }

    pub fn into_timings(self) -> BTreeMap<String, f64> {
        self.laps
    }
}
