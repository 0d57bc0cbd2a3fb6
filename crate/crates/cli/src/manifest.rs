use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context as _, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::{Context, SeedSource};

#[derive(Debug, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub counts: BTreeMap<String, Value>,
}

/// What a run read, wrote and took. Written for every subcommand.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub seed_source: SeedSource,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<StageRecord>,
    /// Headline numbers, e.g. recall for the pipeline.
    pub results: BTreeMap<String, Value>,
}

impl RunManifest {
    pub fn new(ctx: &Context, command: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: ctx.config_path.clone(),
            config_hash: ctx.config_hash.clone(),
            seeds: BTreeMap::from([("global".to_string(), ctx.seed)]),
            seed_source: ctx.seed_source,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    /// Time `f` as a stage; it fills in the stage's counts.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut BTreeMap<String, Value>) -> Result<T>) -> Result<T> {
        let started = Instant::now();
        let mut counts = BTreeMap::new();
        let out = f(&mut counts);
        self.stages.push(StageRecord { name: name.to_string(), seconds: started.elapsed().as_secs_f64(), counts });
        out
    }

    /// Write to `--manifest`, else to `default`. Commands that only print to
    /// stdout pass `None` and write nothing unless `--manifest` was given.
    pub fn finish(self, ctx: &Context, default: Option<PathBuf>) -> Result<()> {
        let Some(path) = ctx.manifest.clone().or(default) else {
            return Ok(());
        };
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))?;
        log::info!("manifest written to {}", path.display());
        Ok(())
    }
}

/// `out.csv` → `out.csv.manifest.json`.
pub fn beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
