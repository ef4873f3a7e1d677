//! Artifact directory layout.
//!
//! Every command writes `config.json`, `metadata.json`, `report.json`,
//! `report.txt` and `timing.json`, plus its own JSONL record files. All files
//! except `timing.json` are a pure function of the config and the backend's
//! responses.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use clarify_core::gateway::GatewayStats;

use crate::error::CliError;
use crate::report::{Report, ReportFile, TOOL_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool_version: String,
    pub command: String,
    pub backend: String,
    pub judge: String,
    pub examples: usize,
    pub failures: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    elapsed_ms: u128,
    backend_calls: u64,
    cache_hits: u64,
}

pub struct ArtifactWriter {
    dir: PathBuf,
    started: Instant,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), started: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.text(name, &text)
    }

    pub fn jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |e: std::io::Error| CliError::io(&path, e);
        let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(io)?);
        for item in items {
            serde_json::to_writer(&mut f, item).expect("record serializes");
            f.write_all(b"\n").map_err(io)?;
        }
        f.flush().map_err(io)
    }

    pub fn report(&self, report: &Report) -> Result<(), CliError> {
        self.json("report.json", &ReportFile { tool_version: TOOL_VERSION.to_owned(), report: report.clone() })?;
        self.text("report.txt", &report.render())
    }

    /// Written last; the only file that differs between identical runs.
    pub fn finish(self, stats: GatewayStats) -> Result<PathBuf, CliError> {
        self.json(
            "timing.json",
            &Timing {
                elapsed_ms: self.started.elapsed().as_millis(),
                backend_calls: stats.backend_calls,
                cache_hits: stats.cache_hits,
            },
        )?;
        Ok(self.dir)
    }
}
