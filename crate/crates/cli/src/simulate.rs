use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use idslice::generator::TimeRange;
use idslice::simulator::{SimConfig, SimulatedPlatform};

use crate::config::{ConfigError, Context, StageContext};
use crate::inputs;
use crate::manifest::RunManifest;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const STATE_FILE: &str = "sim_state.toml";

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Output directory for the ground truth, state file and manifest.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Export only this window; defaults to the whole horizon.
    #[arg(long, value_name = "START..END")]
    range: Option<TimeRange>,
    /// Also write a corpus CSV of this many IDs sampled from the export window.
    #[arg(long, value_name = "N")]
    corpus: Option<usize>,
}

/// The `[simulator]` section resolved against the config's layout and seed.
pub fn resolve(ctx: &Context) -> Result<SimConfig> {
    let cfg = ctx.require_config("simulate")?;
    let section = cfg.simulator.as_ref().ok_or_else(|| ConfigError::new("config has no [simulator] section"))?;
    section.resolve(&cfg.layout, ctx.seed)
}

/// Write the state file and ground truth for `range`; returns the post count.
pub fn export(platform: &SimulatedPlatform, range: TimeRange, dir: &Path) -> Result<u64> {
    std::fs::create_dir_all(dir)?;
    let mut state = inputs::create(&dir.join(STATE_FILE))?;
    state.write_all(platform.config().to_toml_string().as_bytes())?;
    state.flush()?;
    let mut w = inputs::create(&dir.join(GROUND_TRUTH_FILE))?;
    let n = platform.export_ground_truth(range, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    let cfg = resolve(ctx)?;
    let mut manifest = RunManifest::new(ctx, "simulate");
    manifest.seeds.insert("simulator".into(), cfg.seed);
    let platform = SimulatedPlatform::build(cfg).map_err(|e| ConfigError::new(e.to_string()))?;
    let range = args.range.unwrap_or(platform.horizon());
    manifest
        .stage("simulate", |counts| {
            let n = export(&platform, range, &args.out)?;
            counts.insert("posts".into(), n.into());
            if let Some(size) = args.corpus {
                let corpus = platform.sample_corpus(range, size, ctx.seed)?;
                let mut w = inputs::create(&args.out.join("corpus.csv"))?;
                corpus.write_csv(&mut w)?;
                w.flush()?;
                counts.insert("corpus".into(), corpus.len().into());
            }
            Ok(())
        })
        .stage("simulate")?;
    manifest.output(&args.out.join(STATE_FILE));
    manifest.output(&args.out.join(GROUND_TRUTH_FILE));
    if args.corpus.is_some() {
        manifest.output(&args.out.join("corpus.csv"));
    }
    manifest.finish(ctx, Some(args.out.join("manifest.json")))
}
