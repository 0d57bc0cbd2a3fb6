use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use idslice::estimators::{bucket_volume, BucketWidth};
use idslice::harness::{compute_recall, summarize_results, Fetcher, HttpFetcher};
use idslice::inference::IdCorpus;
use idslice::simulator::{SimFetcher, SimulatedPlatform};

use crate::config::{ConfigError, Context, FetcherKind, SeedSource, StageContext};
use crate::fetch::{self, Candidates, FetchSettings};
use crate::generate::stream_for;
use crate::infer::infer_into;
use crate::inputs;
use crate::manifest::RunManifest;
use crate::{simulate, stats};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Output directory; defaults to `output_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Discard an existing fetch sink instead of resuming it.
    #[arg(long)]
    fresh: bool,
    /// Stop the fetch stage after this many candidates (resume by rerunning).
    #[arg(long, value_name = "N")]
    stop_after: Option<u64>,
    /// Skip the per-bit regressions in the infer stage.
    #[arg(long)]
    no_predictability: bool,
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    let cfg = ctx.require_config("pipeline")?.clone();
    let out = args
        .out
        .clone()
        .or(cfg.output_dir.clone())
        .ok_or_else(|| ConfigError::new("no output directory: pass --out or set output_dir"))?;
    let layout = cfg.layout.clone();
    let range = cfg.generate.range.ok_or_else(|| ConfigError::new("missing field `generate.range`"))?;
    let mut manifest = RunManifest::new(ctx, "pipeline");
    std::fs::create_dir_all(&out).stage("pipeline")?;

    let platform = match &cfg.simulator {
        Some(section) => {
            let sim = section.resolve(&layout, ctx.seed)?;
            manifest.seeds.insert("simulator".into(), sim.seed);
            Some(SimulatedPlatform::build(sim).map_err(|e| ConfigError::new(e.to_string()))?)
        }
        None => None,
    };
    if platform.is_none() && (cfg.fetch.fetcher == FetcherKind::Sim || cfg.infer.corpus.is_none()) {
        return Err(ConfigError::new("without [simulator] the pipeline needs infer.corpus and fetch.fetcher = \"http\"").into());
    }

    // simulate
    let sim_dir = out.join("simulate");
    let truth: Option<HashSet<u64>> = match &platform {
        Some(p) => Some(manifest.stage("simulate", |counts| {
            let n = simulate::export(p, range, &sim_dir)?;
            counts.insert("posts_in_window".into(), n.into());
            counts.insert("posts_in_horizon".into(), p.count_in(p.horizon()).into());
            Ok(p.ids_in(range).collect())
        })
        .stage("simulate")?),
        None => None,
    };
    if platform.is_some() {
        manifest.output(&sim_dir.join(simulate::STATE_FILE));
        manifest.output(&sim_dir.join(simulate::GROUND_TRUTH_FILE));
    }

    // infer + coverage
    let infer_dir = out.join("infer");
    let mut training = cfg.infer.training;
    training.seed = ctx.seed;
    let inferred = manifest
        .stage("infer", |counts| {
            let corpus = match (&cfg.infer.corpus, &platform) {
                (Some(p), _) => inputs::read_corpus(p)?,
                (None, Some(plat)) => {
                    let train = cfg.infer.train_range.unwrap_or(plat.horizon());
                    plat.sample_corpus(train, cfg.infer.sample_size, ctx.seed)?
                }
                (None, None) => unreachable!("checked above"),
            };
            std::fs::create_dir_all(&infer_dir)?;
            let mut w = inputs::create(&infer_dir.join("corpus.csv"))?;
            corpus.write_csv(&mut w)?;
            w.flush()?;
            let params = (!args.no_predictability).then_some(&training);
            let o = infer_into(&corpus, &layout, params, &infer_dir)?;
            counts.insert("corpus".into(), corpus.len().into());
            counts.insert("patterns".into(), o.catalog.len().into());
            Ok((corpus, o))
        })
        .stage("infer")?;
    let (corpus, inferred): (IdCorpus, _) = inferred;
    for f in &inferred.files {
        manifest.output(f);
    }
    if let Some(p) = &cfg.infer.corpus {
        manifest.input(p);
    }
    let pooled = inferred.coverage.last().expect("pooled row").estimate;
    manifest.stage("coverage", |counts| {
        counts.insert("coverage".into(), pooled.coverage.into());
        counts.insert("singletons".into(), pooled.n_singletons.into());
        Ok(())
    })?;
    manifest.result("coverage", pooled.coverage);
    manifest.result("ms_anomaly_fraction", inferred.ms_anomaly_fraction);

    // generate
    let stream = manifest
        .stage("generate", |counts| {
            let s = stream_for(range, &inferred.catalog, cfg.generate.target_capture, &layout)?;
            counts.insert("candidates".into(), s.total().into());
            counts.insert("patterns".into(), s.patterns().len().into());
            Ok(s)
        })
        .stage("generate")?;

    // fetch
    let fetch_dir = out.join("fetch");
    let sink_path = fetch_dir.join("sink.jsonl");
    let mut policy = cfg.fetch.policy.clone();
    if !matches!(ctx.seed_source, SeedSource::Default) {
        policy.seed = ctx.seed;
    }
    manifest.seeds.insert("backoff".into(), policy.seed);
    let settings =
        FetchSettings { policy, checkpoint_every: cfg.fetch.checkpoint_every, stop_after: args.stop_after, fresh: args.fresh };
    let http;
    let sim;
    let fetcher: &dyn Fetcher = match cfg.fetch.fetcher {
        FetcherKind::Sim => {
            sim = SimFetcher::new(platform.as_ref().expect("checked above"), cfg.fetch.clock);
            &sim
        }
        FetcherKind::Http => {
            let c = cfg.fetch.http.clone().ok_or_else(|| ConfigError::new("fetch.fetcher = \"http\" needs [fetch.http]"))?;
            http = HttpFetcher::new(c).map_err(|e| ConfigError::new(e.to_string()))?;
            &http
        }
    };
    let total = stream.total();
    let outcome = manifest
        .stage("fetch", |counts| {
            let o = fetch::fetch_into(Candidates::Stream(stream), fetcher, &settings, &layout, &sink_path)?;
            counts.insert("candidates".into(), o.summary.candidates.into());
            counts.insert("resumed_from".into(), o.resumed_from.into());
            counts.insert("completed_total".into(), o.summary.completed_total.into());
            counts.insert("throughput".into(), o.summary.throughput.into());
            Ok(o)
        })
        .stage("fetch")?;
    manifest.output(&sink_path);
    if outcome.summary.completed_total < total {
        eprintln!(
            "fetch stopped at {} of {} candidates; rerun to resume",
            outcome.summary.completed_total, total
        );
        manifest.result("complete", false);
        return manifest.finish(ctx, Some(out.join("manifest.json")));
    }

    // stats
    let stats_dir = out.join("stats");
    let written = manifest
        .stage("stats", |counts| {
            std::fs::create_dir_all(&stats_dir)?;
            let results = inputs::read_sink(&sink_path)?;
            let mut files = Vec::new();
            let mut file = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
                let p = stats_dir.join(name);
                files.push(p.clone());
                inputs::create(&p)
            };

            let summary = summarize_results(&results, &layout);
            counts.insert("hits".into(), summary.hits.into());
            counts.insert("hit_rate".into(), summary.hit_rate.into());
            idslice::harness::write_error_table(&idslice::harness::summarize_errors(&results), file("errors.csv")?)?;
            let mut with_hits = inferred.catalog.clone();
            summary.fold_into(&mut with_hits);
            with_hits.write_csv(file("catalog_with_hits.csv")?)?;
            let recall = match &truth {
                Some(t) if !t.is_empty() => Some(compute_recall(&results, t)?),
                _ => None,
            };

            let obs = inputs::observations(&results, &layout);
            let ids = obs.iter().map(|o| o.id);
            stats::write_volume(&bucket_volume(ids.clone(), &layout, BucketWidth::Second, range), file("volume_second.csv")?)?;
            if range.seconds() >= 60 {
                stats::write_volume(&bucket_volume(ids.clone(), &layout, BucketWidth::Minute, range), file("volume_minute.csv")?)?;
            }
            if range.seconds() == 3600 && range.start % 3600 == 0 {
                let hour = bucket_volume(ids, &layout, BucketWidth::Minute, range);
                stats::write_corrections(&hour, file("correction.csv")?)?;
            }
            stats::deletion(&results, &layout, file("deletion.csv")?)?;
            match stats::zeroth(&obs, file("zeroth.csv")?, Some(file("second_of_minute.csv")?)) {
                Ok(ratio) => {
                    counts.insert("spike_ratio".into(), ratio.into());
                }
                Err(e) => log::warn!("zeroth-second analysis skipped: {e:#}"),
            }

            let mut tables = cfg.stats.clone();
            if let Some(p) = &platform {
                for (region, mix) in &p.config().country_mix {
                    for country in mix.keys() {
                        tables.region_of.entry(country.clone()).or_insert_with(|| region.clone());
                    }
                }
            }
            for row in &inferred.coverage {
                if let Some(label) = &row.label {
                    tables.coverage.entry(label.clone()).or_insert(row.estimate.coverage);
                }
            }
            match stats::country(&obs, &tables, file("country.csv")?) {
                Ok(rows) => {
                    counts.insert("countries".into(), rows.len().into());
                }
                Err(e) => log::warn!("country correction skipped: {e:#}"),
            }
            if !tables.utc_offsets.is_empty() {
                stats::localtime(&obs, &tables.utc_offsets, file("localtime.csv")?)?;
            }
            if let Some(mut p) = tables.prevalence {
                p.seed = ctx.seed;
                stats::prevalence(&p, file("prevalence.csv")?)?;
            }
            Ok((files, recall, summary.hit_rate))
        })
        .stage("stats")?;
    let (files, recall, hit_rate) = written;
    for f in &files {
        manifest.output(f);
    }
    manifest.result("complete", true);
    manifest.result("candidates", total);
    manifest.result("hit_rate", hit_rate);
    manifest.result("corpus", corpus.len());
    if let Some(r) = recall {
        manifest.result("recall", r);
        eprintln!("recall {r:.4} (coverage estimate {:.4})", pooled.coverage);
    }
    manifest.finish(ctx, Some(out.join("manifest.json")))
}
