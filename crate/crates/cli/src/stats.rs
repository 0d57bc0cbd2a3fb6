use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use idslice::estimators::{
    bucket_volume, country_corrected_counts, deletion_rate_curve, extrapolate_daily_volume, local_time_histogram,
    minute_correction_factor, prevalence_ci, second_of_minute_histogram, zeroth_second_analysis, BucketWidth, CountryEstimate,
    LocalTimeHistogram, PrevalenceInput, VolumeSeries,
};
use idslice::generator::TimeRange;
use idslice::harness::FetchResult;
use idslice::idcodec::IdLayout;
use serde::Serialize;

use crate::config::{read_toml, ConfigError, Context, SeedSource, StageContext, StatsSection};
use crate::inputs::{self, Observation};
use crate::manifest::{beside, RunManifest};

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Fetch sink (`.jsonl`) or ground-truth export (`.csv`).
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// CSV report; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    layout: Option<PathBuf>,
}

#[derive(Debug, clap::Subcommand)]
pub enum Command {
    /// Posts per time bucket.
    Volume {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "START..END")]
        range: TimeRange,
        #[arg(long, default_value = "minute")]
        width: BucketWidth,
    },
    /// Each minute's activity relative to the rest of its hour.
    Correction {
        #[command(flatten)]
        common: Common,
        /// First second of a fully sampled hour.
        #[arg(long, value_name = "EPOCH")]
        hour: u64,
    },
    /// Daily total from one sampled minute per hour.
    Daily {
        #[command(flatten)]
        common: Common,
        /// First second of the day.
        #[arg(long, value_name = "EPOCH")]
        day: u64,
        /// Sampled minute of each hour; defaults to `stats.correction_minute` (42).
        #[arg(long)]
        minute: Option<usize>,
        /// Correction factor for the sampled minute.
        #[arg(long, conflicts_with = "factor_hour", required_unless_present = "factor_hour")]
        factor: Option<f64>,
        /// Derive the factor from this fully sampled hour of the input instead.
        #[arg(long, value_name = "EPOCH")]
        factor_hour: Option<u64>,
    },
    /// Second-0 spike in metadata create times and its engagement difference.
    Zeroth {
        #[command(flatten)]
        common: Common,
        /// Also write the second-of-minute histograms (metadata and ID time).
        #[arg(long, value_name = "FILE")]
        histogram: Option<PathBuf>,
    },
    /// Per-country counts corrected by regional coverage.
    Country {
        #[command(flatten)]
        common: Common,
        /// TOML with `region_of`, `coverage`, `populations` and `min_posts`; defaults to the config's `[stats]`.
        #[arg(long, value_name = "FILE")]
        tables: Option<PathBuf>,
    },
    /// Posting hour in each post's local time.
    Localtime {
        #[command(flatten)]
        common: Common,
        /// TOML with `utc_offsets`; defaults to the config's `[stats]`.
        #[arg(long, value_name = "FILE")]
        tables: Option<PathBuf>,
    },
    /// Deleted share of ever-existing posts by age at fetch time.
    Deletion {
        #[command(flatten)]
        common: Common,
    },
    /// Bootstrap CI for a classifier-estimated prevalence.
    Prevalence {
        /// TOML with the prevalence inputs; defaults to `stats.prevalence`.
        #[arg(long, value_name = "FILE")]
        params: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn write_rows<T: Serialize>(rows: impl IntoIterator<Item = T>, w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_volume(series: &VolumeSeries, w: impl Write) -> Result<()> {
    series.write_csv(w)?;
    Ok(())
}

#[derive(Serialize)]
struct CorrectionRow {
    minute: usize,
    count: u64,
    factor: f64,
}

pub fn write_corrections(hour: &VolumeSeries, w: impl Write) -> Result<()> {
    let rows = (0..hour.counts.len())
        .map(|m| Ok(CorrectionRow { minute: m, count: hour.counts[m], factor: minute_correction_factor(hour, m)? }))
        .collect::<Result<Vec<_>, idslice::estimators::EstimatorError>>()?;
    write_rows(rows, w)
}

#[derive(Serialize)]
struct DailyRow {
    hour: String,
    sampled: Option<u64>,
    estimate: f64,
}

pub fn daily_estimate(ids: &[u64], layout: &IdLayout, day: u64, minute: usize, factor: f64, w: impl Write) -> Result<f64> {
    if minute >= 60 {
        return Err(ConfigError::new(format!("minute must be below 60, got {minute}")).into());
    }
    let samples: Vec<u64> = (0..24u64)
        .map(|h| {
            let start = day + h * 3600 + minute as u64 * 60;
            let r = TimeRange::new(start, start + 60).expect("non-empty minute");
            bucket_volume(ids.iter().copied(), layout, BucketWidth::Minute, r).total()
        })
        .collect();
    let est = extrapolate_daily_volume(&samples, factor)?;
    let mut rows: Vec<DailyRow> = est
        .hourly
        .iter()
        .zip(&samples)
        .enumerate()
        .map(|(h, (&e, &s))| DailyRow { hour: h.to_string(), sampled: Some(s), estimate: e })
        .collect();
    rows.push(DailyRow { hour: "total".into(), sampled: None, estimate: est.total });
    write_rows(rows, w)?;
    Ok(est.total)
}

#[derive(Serialize)]
struct MetricRow<'a> {
    metric: &'a str,
    value: f64,
}

/// Writes the zeroth-second summary; returns the spike ratio.
pub fn zeroth(obs: &[Observation], w: impl Write, histogram: Option<impl Write>) -> Result<f64> {
    let posts: Vec<(u64, u64)> = obs.iter().filter_map(|o| Some((o.metadata_time?, o.views?))).collect();
    let z = zeroth_second_analysis(&posts)?;
    write_rows(
        [
            MetricRow { metric: "spike_ratio", value: z.spike_ratio },
            MetricRow { metric: "n_zero", value: z.n_zero as f64 },
            MetricRow { metric: "n_other", value: z.n_other as f64 },
            MetricRow { metric: "mean_views_zero", value: z.mean_views_zero },
            MetricRow { metric: "mean_views_other", value: z.mean_views_other },
            MetricRow { metric: "p_value", value: z.p_value },
        ],
        w,
    )?;
    if let Some(h) = histogram {
        #[derive(Serialize)]
        struct Row {
            second: usize,
            metadata_time: u64,
            id_time: u64,
        }
        let meta = second_of_minute_histogram(posts.iter().map(|p| p.0));
        let id = second_of_minute_histogram(obs.iter().map(|o| o.created.seconds));
        write_rows((0..60).map(|s| Row { second: s, metadata_time: meta[s], id_time: id[s] }), h)?;
    }
    Ok(z.spike_ratio)
}

pub fn country(obs: &[Observation], tables: &StatsSection, w: impl Write) -> Result<Vec<CountryEstimate>> {
    let raw = inputs::country_counts(obs);
    let rows = country_corrected_counts(&raw, &tables.region_of, &tables.coverage, &tables.populations, tables.min_posts)?;
    write_rows(&rows, w)?;
    Ok(rows)
}

pub fn localtime(obs: &[Observation], offsets: &BTreeMap<String, f64>, w: impl Write) -> Result<LocalTimeHistogram> {
    let hist = local_time_histogram(obs.iter().map(|o| (o.country.as_deref(), o.created)), offsets);
    #[derive(Serialize)]
    struct Row {
        hour: String,
        posts: u64,
    }
    let rows = hist
        .bins
        .iter()
        .enumerate()
        .map(|(h, &n)| Row { hour: h.to_string(), posts: n })
        .chain([Row { hour: "unknown".into(), posts: hist.unknown }]);
    write_rows(rows, w)?;
    Ok(hist)
}

pub fn deletion(results: &[FetchResult], layout: &IdLayout, w: impl Write) -> Result<()> {
    write_rows(deletion_rate_curve(results, layout), w)
}

pub fn prevalence(input: &PrevalenceInput, w: impl Write) -> Result<()> {
    write_rows([prevalence_ci(input)?], w)
}

fn tables(ctx: &Context, path: Option<&PathBuf>) -> Result<StatsSection> {
    match path {
        Some(p) => read_toml(p),
        None => Ok(ctx.section(|c| &c.stats)),
    }
}

pub fn run(ctx: &Context, cmd: Command) -> Result<()> {
    let name = match &cmd {
        Command::Volume { .. } => "stats volume",
        Command::Correction { .. } => "stats correction",
        Command::Daily { .. } => "stats daily",
        Command::Zeroth { .. } => "stats zeroth",
        Command::Country { .. } => "stats country",
        Command::Localtime { .. } => "stats localtime",
        Command::Deletion { .. } => "stats deletion",
        Command::Prevalence { .. } => "stats prevalence",
    };
    let mut manifest = RunManifest::new(ctx, name);

    if let Command::Prevalence { params, out } = cmd {
        let mut input: PrevalenceInput = match &params {
            Some(p) => {
                manifest.input(p);
                read_toml(p)?
            }
            None => ctx
                .section(|c| &c.stats)
                .prevalence
                .ok_or_else(|| ConfigError::new("pass --params FILE or set [stats.prevalence]"))?,
        };
        if !matches!(ctx.seed_source, SeedSource::Default) {
            input.seed = ctx.seed;
        }
        input.validate().map_err(|e| ConfigError::new(e.to_string()))?;
        manifest.seeds.insert("bootstrap".into(), input.seed);
        manifest.stage(name, |_| prevalence(&input, inputs::output(out.as_deref())?)).stage("stats")?;
        if let Some(p) = &out {
            manifest.output(p);
        }
        return manifest.finish(ctx, out.as_deref().map(beside));
    }

    let common = match &cmd {
        Command::Volume { common, .. }
        | Command::Correction { common, .. }
        | Command::Daily { common, .. }
        | Command::Zeroth { common, .. }
        | Command::Country { common, .. }
        | Command::Localtime { common, .. }
        | Command::Deletion { common } => common,
        Command::Prevalence { .. } => unreachable!("handled above"),
    };
    let layout = ctx.layout(common.layout.as_deref())?;
    manifest.input(&common.input);
    let out_path = common.out.clone();
    let out = || inputs::output(out_path.as_deref());

    manifest
        .stage(name, |counts| {
            match &cmd {
                Command::Deletion { common } => {
                    let results = inputs::read_sink(&common.input)?;
                    counts.insert("results".into(), results.len().into());
                    deletion(&results, &layout, out()?)?;
                }
                Command::Volume { common, range, width } => {
                    let obs = inputs::read_observations(&common.input, &layout)?;
                    let series = bucket_volume(obs.iter().map(|o| o.id), &layout, *width, *range);
                    counts.insert("posts".into(), series.total().into());
                    write_volume(&series, out()?)?;
                }
                Command::Correction { common, hour } => {
                    let obs = inputs::read_observations(&common.input, &layout)?;
                    let range = TimeRange::new(*hour, hour + 3600)?;
                    write_corrections(&bucket_volume(obs.iter().map(|o| o.id), &layout, BucketWidth::Minute, range), out()?)?;
                }
                Command::Daily { common, day, minute, factor, factor_hour } => {
                    let obs = inputs::read_observations(&common.input, &layout)?;
                    let ids: Vec<u64> = obs.iter().map(|o| o.id).collect();
                    let minute = minute.unwrap_or(ctx.section(|c| &c.stats).correction_minute);
                    let factor = match (factor, factor_hour) {
                        (Some(f), _) => *f,
                        (None, Some(h)) => {
                            let hour = bucket_volume(ids.iter().copied(), &layout, BucketWidth::Minute, TimeRange::new(*h, h + 3600)?);
                            minute_correction_factor(&hour, minute)?
                        }
                        (None, None) => unreachable!("clap requires --factor or --factor-hour"),
                    };
                    let total = daily_estimate(&ids, &layout, *day, minute, factor, out()?)?;
                    counts.insert("factor".into(), factor.into());
                    counts.insert("daily_total".into(), total.into());
                }
                Command::Zeroth { common, histogram } => {
                    let obs = inputs::read_observations(&common.input, &layout)?;
                    let h = histogram.as_deref().map(inputs::create).transpose()?;
                    let ratio = zeroth(&obs, out()?, h)?;
                    counts.insert("spike_ratio".into(), ratio.into());
                }
                Command::Country { common, tables: t } => {
                    let obs = inputs::read_observations(&common.input, &layout)?;
                    let rows = country(&obs, &tables(ctx, t.as_ref())?, out()?)?;
                    counts.insert("countries".into(), rows.len().into());
                }
                Command::Localtime { common, tables: t } => {
                    let obs = inputs::read_observations(&common.input, &layout)?;
                    let hist = localtime(&obs, &tables(ctx, t.as_ref())?.utc_offsets, out()?)?;
                    counts.insert("unknown".into(), hist.unknown.into());
                }
                Command::Prevalence { .. } => unreachable!("handled above"),
            }
            Ok(())
        })
        .stage("stats")?;
    if let Some(p) = &out_path {
        manifest.output(p);
    }
    manifest.finish(ctx, out_path.as_deref().map(beside))
}
