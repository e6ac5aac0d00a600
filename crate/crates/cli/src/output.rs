use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use poco_core::io::write_text;
use poco_core::rng::RNG_ALGORITHM;
use poco_core::{Result, SCHEMA_VERSION, TOOL_VERSION};
use serde::Serialize;

use crate::config::RunConfig;

/// Common wrapper for every JSON artifact.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub rng: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub seeds: &'a [u64],
    pub result: T,
}

impl<'a, T: Serialize> Envelope<'a, T> {
    pub fn new(command: &'a str, config: &'a RunConfig, seeds: &'a [u64], result: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION,
            rng: RNG_ALGORITHM,
            command,
            config,
            seeds,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Comment lines that open every CSV artifact.
pub fn csv_preamble(command: &str, config: &RunConfig, seeds: &[u64]) -> Result<String> {
    Ok(format!(
        "# command: {command}\n# schema_version: {SCHEMA_VERSION}\n# tool_version: {TOOL_VERSION}\n# config: {}\n# seeds:{}\n",
        serde_json::to_string(config)?,
        seeds.iter().map(|s| format!(" {s}")).collect::<String>()
    ))
}

#[derive(Serialize)]
struct Sidecar<'a> {
    command: &'a str,
    started_unix_secs: u64,
    elapsed_secs: f64,
    threads: usize,
    outputs: &'a [PathBuf],
}

/// Tracks written artifacts and records run metadata, including wall-clock
/// times, in a separate `<command>.meta.json` so the artifacts themselves
/// stay reproducible.
pub struct Run {
    command: &'static str,
    out_dir: PathBuf,
    started: SystemTime,
    clock: Instant,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &'static str, out_dir: &Path) -> Self {
        Self {
            command,
            out_dir: out_dir.to_path_buf(),
            started: SystemTime::now(),
            clock: Instant::now(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        write_text(&path, text)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn finish(self) -> Result<()> {
        let sidecar = Sidecar {
            command: self.command,
            started_unix_secs: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_secs: self.clock.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        write_text(&self.out_dir.join(format!("{}.meta.json", self.command)), &text)
    }
}
