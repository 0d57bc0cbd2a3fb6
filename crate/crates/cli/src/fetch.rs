use std::path::{Path, PathBuf};

use anyhow::Result;
use idslice::generator::{CandidateStream, TimeRange};
use idslice::harness::{
    run_fetch, summarize_errors, write_error_table, FetchPolicy, Fetcher, HttpFetcher, HttpProbeConfig, JsonlSink,
    RunOptions, RunSummary,
};
use idslice::idcodec::IdLayout;
use idslice::inference::PatternCatalog;
use idslice::simulator::{FetchClock, SimConfig, SimFetcher, SimulatedPlatform};

use crate::config::{read_toml, ConfigError, Context, FetcherKind, SeedSource, StageContext};
use crate::generate::{resolve_range, stream_for};
use crate::inputs;
use crate::manifest::RunManifest;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Newline-delimited candidate IDs.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["range", "catalog"])]
    candidates: Option<PathBuf>,
    /// Enumerate this range from --catalog instead of reading candidates.
    #[arg(long, value_name = "START..END", requires = "catalog")]
    range: Option<TimeRange>,
    #[arg(long, value_name = "FILE")]
    catalog: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    stride: u64,
    #[arg(long, value_name = "F")]
    target_capture: Option<f64>,
    /// Defaults to `fetch.fetcher` in the config, else `sim`.
    #[arg(long, value_enum)]
    fetcher: Option<FetcherKind>,
    /// Simulator state written by `idslice simulate`; defaults to the config's `[simulator]`.
    #[arg(long, value_name = "FILE")]
    sim_state: Option<PathBuf>,
    /// Simulated probes happen this many days after each candidate's ID time.
    #[arg(long, value_name = "DAYS")]
    delay_days: Option<f64>,
    /// HTTP probe settings (TOML); defaults to `fetch.http` in the config.
    #[arg(long, value_name = "FILE")]
    http: Option<PathBuf>,
    /// Fetch policy (TOML); defaults to `fetch.policy` in the config.
    #[arg(long, value_name = "FILE")]
    policy: Option<PathBuf>,
    /// JSONL result sink. An existing sink is resumed.
    #[arg(long, value_name = "FILE")]
    sink: PathBuf,
    /// Start over even if the sink already holds results.
    #[arg(long)]
    fresh: bool,
    /// Stop after this many candidates in this invocation.
    #[arg(long, value_name = "N")]
    stop_after: Option<u64>,
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<u64>,
    /// Status table CSV (Status,Count,Pct); defaults to `<sink>.errors.csv`.
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
    /// Write the catalog again with per-pattern request and hit counts.
    #[arg(long, value_name = "FILE", requires = "catalog")]
    catalog_out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    layout: Option<PathBuf>,
}

/// Where candidates come from.
pub enum Candidates {
    List(Vec<u64>),
    Stream(CandidateStream),
}

impl Candidates {
    pub fn total(&self) -> u64 {
        match self {
            Candidates::List(v) => v.len() as u64,
            Candidates::Stream(s) => s.total(),
        }
    }

    /// Candidates from position `done` on.
    fn from(self, done: u64) -> Box<dyn Iterator<Item = u64> + Send> {
        match self {
            Candidates::List(v) => Box::new(v.into_iter().skip(done as usize)),
            Candidates::Stream(mut s) => {
                s.seek(done);
                Box::new(s)
            }
        }
    }
}

pub struct FetchSettings {
    pub policy: FetchPolicy,
    pub checkpoint_every: u64,
    pub stop_after: Option<u64>,
    pub fresh: bool,
}

pub struct FetchOutcome {
    pub summary: RunSummary,
    /// Candidates already in the sink before this invocation.
    pub resumed_from: u64,
}

/// Run (or resume) a fetch into a JSONL sink.
pub fn fetch_into(
    candidates: Candidates,
    fetcher: &dyn Fetcher,
    settings: &FetchSettings,
    layout: &IdLayout,
    sink_path: &Path,
) -> Result<FetchOutcome> {
    let mut sink = if sink_path.exists() && !settings.fresh {
        JsonlSink::resume(sink_path)?
    } else {
        if let Some(dir) = sink_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        JsonlSink::create(sink_path)?
    };
    let done = sink.completed();
    let total = candidates.total();
    if done > total {
        return Err(ConfigError::new(format!(
            "{} already holds {done} results but there are only {total} candidates; use --fresh",
            sink_path.display()
        ))
        .into());
    }
    if done > 0 {
        log::info!("resuming {} at {done} of {total}", sink_path.display());
    }
    let mut opts = RunOptions::new(layout.clone());
    opts.checkpoint_every = settings.checkpoint_every;
    opts.already_completed = done;
    opts.stop_after = settings.stop_after;
    let summary = run_fetch(candidates.from(done), fetcher, &settings.policy, &mut sink, &opts)?;
    sink.flush()?;
    Ok(FetchOutcome { summary, resumed_from: done })
}

/// Recompute the status table over the whole sink.
pub fn write_summary(sink: &Path, out: &Path) -> Result<()> {
    let results = inputs::read_sink(sink)?;
    write_error_table(&summarize_errors(&results), inputs::create(out)?)?;
    Ok(())
}

pub fn default_summary_path(sink: &Path) -> PathBuf {
    sink.with_extension("errors.csv")
}

fn sim_config(ctx: &Context, state: Option<&Path>, layout: &IdLayout) -> Result<SimConfig> {
    if let Some(p) = state {
        let text = std::fs::read_to_string(p).map_err(|e| ConfigError::in_file(p, e.to_string()))?;
        return Ok(SimConfig::from_toml_str(&text).map_err(|e| ConfigError::in_file(p, e.to_string()))?);
    }
    let cfg = ctx.require_config("the sim fetcher without --sim-state")?;
    let section = cfg.simulator.as_ref().ok_or_else(|| ConfigError::new("the sim fetcher needs a [simulator] section"))?;
    section.resolve(layout, ctx.seed)
}

pub fn sim_clock(ctx: &Context, delay_days: Option<f64>) -> FetchClock {
    match delay_days {
        Some(d) => FetchClock::AfterCreation((d * 86_400.0).round() as u64),
        None => ctx.section(|c| &c.fetch).clock,
    }
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    let layout = ctx.layout(args.layout.as_deref())?;
    let section = ctx.section(|c| &c.fetch);
    let mut manifest = RunManifest::new(ctx, "fetch");

    let mut policy = match &args.policy {
        Some(p) => {
            manifest.input(p);
            read_toml::<FetchPolicy>(p)?
        }
        None => section.policy.clone(),
    };
    if !matches!(ctx.seed_source, SeedSource::Default) {
        policy.seed = ctx.seed;
    }
    policy.validate().map_err(|e| ConfigError::new(format!("fetch policy: {e}")))?;
    manifest.seeds.insert("backoff".into(), policy.seed);

    let mut catalog: Option<PatternCatalog> = None;
    let candidates = if let Some(p) = &args.candidates {
        manifest.input(p);
        Candidates::List(inputs::read_candidates(p).stage("fetch")?)
    } else {
        let path = args.catalog.as_ref().ok_or_else(|| ConfigError::new("pass --candidates FILE or --range with --catalog"))?;
        manifest.input(path);
        let range = resolve_range(ctx, args.range, args.stride)?;
        let target = args.target_capture.or(ctx.section(|c| &c.generate).target_capture);
        let c = inputs::read_catalog(path)?;
        let stream = stream_for(range, &c, target, &layout).stage("generate")?;
        catalog = Some(c);
        Candidates::Stream(stream)
    };

    let settings = FetchSettings {
        policy,
        checkpoint_every: args.checkpoint_every.unwrap_or(section.checkpoint_every),
        stop_after: args.stop_after,
        fresh: args.fresh,
    };
    let kind = args.fetcher.unwrap_or(section.fetcher);
    let outcome = match kind {
        FetcherKind::Sim => {
            let cfg = sim_config(ctx, args.sim_state.as_deref(), &layout)?;
            if cfg.layout != layout {
                return Err(ConfigError::new("the simulator state uses a different layout").into());
            }
            if let Some(p) = &args.sim_state {
                manifest.input(p);
            }
            manifest.seeds.insert("simulator".into(), cfg.seed);
            let platform = SimulatedPlatform::build(cfg).map_err(|e| ConfigError::new(e.to_string()))?;
            let fetcher = SimFetcher::new(&platform, sim_clock(ctx, args.delay_days));
            manifest.stage("fetch", |counts| {
                let o = fetch_into(candidates, &fetcher, &settings, &layout, &args.sink)?;
                counts.insert("candidates".into(), o.summary.candidates.into());
                counts.insert("hits".into(), o.summary.hits.into());
                Ok(o)
            })
        }
        FetcherKind::Http => {
            let config = match &args.http {
                Some(p) => {
                    manifest.input(p);
                    read_toml::<HttpProbeConfig>(p)?
                }
                None => section.http.clone().ok_or_else(|| ConfigError::new("the http fetcher needs --http FILE or [fetch.http]"))?,
            };
            let fetcher = HttpFetcher::new(config).map_err(|e| ConfigError::new(e.to_string()))?;
            manifest.stage("fetch", |counts| {
                let o = fetch_into(candidates, &fetcher, &settings, &layout, &args.sink)?;
                counts.insert("candidates".into(), o.summary.candidates.into());
                counts.insert("hits".into(), o.summary.hits.into());
                Ok(o)
            })
        }
    }
    .stage("fetch")?;

    let summary_path = args.summary.clone().unwrap_or_else(|| default_summary_path(&args.sink));
    write_summary(&args.sink, &summary_path).stage("fetch")?;
    if let (Some(mut c), Some(out)) = (catalog, &args.catalog_out) {
        let all = idslice::harness::summarize_results(&inputs::read_sink(&args.sink)?, &layout);
        let unknown = all.fold_into(&mut c);
        if unknown > 0 {
            log::warn!("{unknown} fetched patterns are not in the catalog");
        }
        inputs::write_catalog(out, &c)?;
        manifest.output(out);
    }

    let s = &outcome.summary;
    eprintln!(
        "{} candidates this run ({} in sink), {} hits, hit rate {:.4}, {:.0}/s",
        s.candidates, s.completed_total, s.hits, s.hit_rate, s.throughput
    );
    manifest.result("completed_total", s.completed_total);
    manifest.result("resumed_from", outcome.resumed_from);
    manifest.output(&args.sink);
    manifest.output(&summary_path);
    let default = args.sink.with_extension("manifest.json");
    manifest.finish(ctx, Some(default))
}
