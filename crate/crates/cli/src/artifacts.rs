//! Input graphs, the run manifest and output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use edgemask_core::graph::{load_dataset, Graph};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_SCHEMA: &str = "edgemask-manifest/1";
pub const METRICS_SCHEMA: &str = "edgemask-metrics/1";

/// Loads a serialized graph file, or a directory holding `features.csv`,
/// `edges.txt` and `labels.txt` (domain id = directory name).
pub fn load_graph(arg: &str) -> Result<Graph, CliError> {
    let path = Path::new(arg);
    if !path.exists() {
        return Err(CliError::config(format!(
            "{arg}: no such file or directory"
        )));
    }
    if path.is_dir() {
        let id = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| arg.to_string());
        return Ok(load_dataset(
            &path.join("features.csv"),
            &path.join("edges.txt"),
            &path.join("labels.txt"),
            &id,
        )?);
    }
    Ok(Graph::load(path)?)
}

pub fn load_graphs(args: &[String]) -> Result<Vec<Graph>, CliError> {
    args.iter().map(|s| load_graph(s)).collect()
}

/// Everything that determines a run's results. Timings live in a separate
/// file so that the hash is reproducible.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        seed: Option<u64>,
        config: &impl Serialize,
    ) -> Result<Self, CliError> {
        Ok(RunManifest {
            schema: MANIFEST_SCHEMA,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn inputs(mut self, inputs: &[String]) -> Self {
        self.inputs = inputs.to_vec();
        self
    }

    pub fn artifacts(mut self, names: &[&str]) -> Self {
        self.artifacts = names.iter().map(|s| s.to_string()).collect();
        self
    }
}

/// Output directory of one run.
pub struct Run {
    dir: PathBuf,
    hash: String,
    started: Instant,
    phases: Vec<(String, f64)>,
}

impl Run {
    /// Creates `dir` and writes `manifest.json` before any result.
    pub fn start(dir: PathBuf, manifest: &RunManifest) -> Result<Self, CliError> {
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
        let text = to_json(manifest)?;
        let hash = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let run = Run {
            dir,
            hash,
            started: Instant::now(),
            phases: Vec::new(),
        };
        run.write("manifest.json", &text)?;
        Ok(run)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        self.write(name, &to_json(value)?)
    }

    pub fn phase(&mut self, name: &str, since: Instant) {
        self.phases
            .push((name.into(), since.elapsed().as_secs_f64()));
    }

    /// Writes `timings.json`.
    pub fn finish(self) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Timings<'a> {
            manifest_sha256: &'a str,
            phases: Vec<Phase<'a>>,
            total_seconds: f64,
        }
        #[derive(Serialize)]
        struct Phase<'a> {
            name: &'a str,
            seconds: f64,
        }
        let t = Timings {
            manifest_sha256: &self.hash,
            phases: self
                .phases
                .iter()
                .map(|(name, seconds)| Phase {
                    name,
                    seconds: *seconds,
                })
                .collect(),
            total_seconds: self.started.elapsed().as_secs_f64(),
        };
        self.write_json("timings.json", &t)
    }
}

pub fn to_json(value: &impl Serialize) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
