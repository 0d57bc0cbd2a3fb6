use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Result;
use idslice::estimators::{PrevalenceInput, DEFAULT_MIN_POSTS};
use idslice::generator::TimeRange;
use idslice::harness::{FetchPolicy, HttpProbeConfig};
use idslice::idcodec::IdLayout;
use idslice::inference::TrainingParams;
use idslice::simulator::{FetchClock, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "IDSLICE_SEED";

/// Schema violation or unusable user input. Exit status 2.
#[derive(Debug)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { path: None, message: message.into() }
    }

    pub fn in_file(path: &Path, message: impl Into<String>) -> Self {
        Self { path: Some(path.to_path_buf()), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.path {
            Some(p) => write!(f, "config error in {}: {}", p.display(), self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A pipeline stage failed. Exit status 3.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub cause: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {:#}", self.stage, self.cause)
    }
}

impl std::error::Error for StageError {}

pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> StageContext<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| {
            let cause = e.into();
            if cause.is::<ConfigError>() {
                cause
            } else {
                StageError { stage, cause }.into()
            }
        })
    }
}

/// The toolkit config file. Only `layout` is required.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    pub seed: Option<u64>,
    pub layout: IdLayout,
    pub output_dir: Option<PathBuf>,
    /// Platform to simulate. Its layout is always the top-level one.
    pub simulator: Option<SimSection>,
    #[serde(default)]
    pub infer: InferSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub fetch: FetchSection,
    #[serde(default)]
    pub stats: StatsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimSection(pub toml::Table);

impl SimSection {
    pub fn resolve(&self, layout: &IdLayout, seed: u64) -> Result<SimConfig> {
        let mut table = self.0.clone();
        if table.contains_key("layout") {
            return Err(ConfigError::new("`simulator.layout` is not allowed; the top-level `layout` applies").into());
        }
        table.entry("seed").or_insert(toml::Value::Integer(seed as i64));
        let text = toml::to_string(&table)?;
        let mut cfg = SimConfig::from_toml_str(&text).map_err(|e| ConfigError::new(format!("[simulator]: {e}")))?;
        cfg.layout = layout.clone();
        cfg.validate().map_err(|e| ConfigError::new(format!("[simulator]: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    /// Corpus CSV. Without one the pipeline samples the simulator.
    pub corpus: Option<PathBuf>,
    /// Window the simulated corpus is drawn from.
    pub train_range: Option<TimeRange>,
    pub sample_size: usize,
    pub training: TrainingParams,
}

impl Default for InferSection {
    fn default() -> Self {
        Self { corpus: None, train_range: None, sample_size: 10_000, training: TrainingParams::default() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub range: Option<TimeRange>,
    pub target_capture: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FetcherKind {
    #[default]
    Sim,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchSection {
    pub fetcher: FetcherKind,
    pub policy: FetchPolicy,
    pub http: Option<HttpProbeConfig>,
    /// When simulated probes happen.
    pub clock: FetchClock,
    pub checkpoint_every: u64,
}

impl Default for FetchSection {
    fn default() -> Self {
        Self {
            fetcher: FetcherKind::Sim,
            policy: FetchPolicy::default(),
            http: None,
            clock: FetchClock::AfterCreation(30 * 86_400),
            checkpoint_every: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub correction_minute: usize,
    pub min_posts: u64,
    /// Country → region whose coverage corrects it.
    pub region_of: BTreeMap<String, String>,
    /// Region → coverage, for `stats country` outside the pipeline.
    pub coverage: BTreeMap<String, f64>,
    pub populations: BTreeMap<String, f64>,
    /// Country → hours east of UTC.
    pub utc_offsets: BTreeMap<String, f64>,
    pub prevalence: Option<PrevalenceInput>,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            correction_minute: 42,
            min_posts: DEFAULT_MIN_POSTS,
            region_of: BTreeMap::new(),
            coverage: BTreeMap::new(),
            populations: BTreeMap::new(),
            utc_offsets: BTreeMap::new(),
            prevalence: None,
        }
    }
}

impl ToolConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: ToolConfig = toml::from_str(text).map_err(|e| ConfigError::in_file(path, e.message().to_string()))?;
        if let Some(t) = cfg.generate.target_capture {
            if !(t > 0.0 && t <= 1.0) {
                return Err(ConfigError::in_file(path, format!("generate.target_capture must be in (0, 1], got {t}")));
            }
        }
        cfg.fetch.policy.validate().map_err(|e| ConfigError::in_file(path, format!("fetch.policy: {e}")))?;
        Ok(cfg)
    }
}

/// Where a seed came from, for the manifest.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    Config,
    Env,
    Default,
}

pub struct Context {
    pub config: Option<ToolConfig>,
    pub config_path: Option<PathBuf>,
    /// SHA-256 of the config file bytes.
    pub config_hash: Option<String>,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub manifest: Option<PathBuf>,
}

impl Context {
    pub fn load(path: Option<&Path>, seed_flag: Option<u64>, manifest: Option<PathBuf>) -> Result<Self> {
        let (config, config_hash) = match path {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| ConfigError::in_file(p, e.to_string()))?;
                let text = String::from_utf8(bytes.clone()).map_err(|_| ConfigError::in_file(p, "not UTF-8"))?;
                (Some(ToolConfig::parse(&text, p)?), Some(hex(&Sha256::digest(&bytes))))
            }
            None => (None, None),
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|e| ConfigError::new(format!("{SEED_ENV}=`{v}`: {e}")))?),
            Err(_) => None,
        };
        let (seed, seed_source) = match (seed_flag, config.as_ref().and_then(|c| c.seed), env_seed) {
            (Some(s), _, _) => (s, SeedSource::Flag),
            (None, Some(s), _) => (s, SeedSource::Config),
            (None, None, Some(s)) => (s, SeedSource::Env),
            _ => (0, SeedSource::Default),
        };
        Ok(Self { config, config_path: path.map(Path::to_path_buf), config_hash, seed, seed_source, manifest })
    }

    /// `--layout` file, else the config's layout, else the default.
    pub fn layout(&self, flag: Option<&Path>) -> Result<IdLayout> {
        if let Some(p) = flag {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::in_file(p, e.to_string()))?;
            return Ok(IdLayout::from_toml_str(&text).map_err(|e| ConfigError::in_file(p, e.to_string()))?);
        }
        Ok(self.config.as_ref().map(|c| c.layout.clone()).unwrap_or_default())
    }

    pub fn section<T: Default + Clone>(&self, pick: impl Fn(&ToolConfig) -> &T) -> T {
        self.config.as_ref().map(|c| pick(c).clone()).unwrap_or_default()
    }

    pub fn require_config(&self, what: &str) -> Result<&ToolConfig> {
        self.config.as_ref().ok_or_else(|| ConfigError::new(format!("{what} needs --config")).into())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Read a standalone TOML file into `T`, reporting problems as config errors.
pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::in_file(path, e.to_string()))?;
    Ok(toml::from_str(&text).map_err(|e| ConfigError::in_file(path, e.message().to_string()))?)
}
