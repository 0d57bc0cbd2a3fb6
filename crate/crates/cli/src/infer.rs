use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use idslice::idcodec::IdLayout;
use idslice::inference::{
    bit_predictability, build_catalog, coverage_by_label, fetch_overlap, field_histogram, good_turing_coverage, IdCorpus,
    LabelCoverage, PatternCatalog, TrainingParams,
};
use serde::Serialize;

use crate::config::{Context, StageContext};
use crate::inputs;
use crate::manifest::{beside, RunManifest};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Corpus CSV with columns `id,label,entity_kind`.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    #[arg(long, value_name = "FILE")]
    layout: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Skip the per-bit regressions.
    #[arg(long)]
    no_predictability: bool,
}

#[derive(Debug, clap::Args)]
pub struct CoverageArgs {
    /// Corpus CSV; coverage is reported per label and pooled.
    #[arg(long, value_name = "FILE", conflicts_with = "catalog", required_unless_present = "catalog")]
    corpus: Option<PathBuf>,
    /// Catalog CSV; pooled coverage only.
    #[arg(long, value_name = "FILE")]
    catalog: Option<PathBuf>,
    /// Held-out corpus whose pattern overlap with the catalog is reported.
    #[arg(long, value_name = "FILE")]
    holdout: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    layout: Option<PathBuf>,
    /// CSV report; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CoverageRow {
    label: String,
    n_posts: u64,
    distinct_patterns: usize,
    coverage: f64,
    p_unseen: f64,
    n_singletons: u64,
    upper_bound: bool,
    fetch_overlap: Option<f64>,
}

impl CoverageRow {
    fn from_label(row: &LabelCoverage) -> Self {
        Self {
            label: row.label.clone().unwrap_or_else(|| "all".into()),
            n_posts: row.n_posts as u64,
            distinct_patterns: row.distinct_patterns,
            coverage: row.estimate.coverage,
            p_unseen: row.estimate.p_unseen,
            n_singletons: row.estimate.n_singletons,
            upper_bound: row.estimate.upper_bound,
            fetch_overlap: None,
        }
    }
}

fn write_coverage(rows: &[CoverageRow], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PredictabilityRow {
    bit: u32,
    field: String,
    score: Option<f64>,
    strongest_input: Option<u32>,
    strongest_weight: Option<f64>,
}

#[derive(Serialize)]
struct HistRow {
    value: u64,
    count: u64,
}

/// What `infer` produced, for callers that continue the pipeline.
pub struct InferOutputs {
    pub catalog: PatternCatalog,
    pub coverage: Vec<LabelCoverage>,
    pub ms_anomaly_fraction: f64,
    pub files: Vec<PathBuf>,
}

/// Write catalog, predictability table, field histograms and coverage report into `dir`.
pub fn infer_into(
    corpus: &IdCorpus,
    layout: &IdLayout,
    params: Option<&TrainingParams>,
    dir: &Path,
) -> Result<InferOutputs> {
    let mut files = Vec::new();
    std::fs::create_dir_all(dir)?;
    let catalog = build_catalog(corpus, layout);
    let catalog_path = dir.join("catalog.csv");
    inputs::write_catalog(&catalog_path, &catalog)?;
    files.push(catalog_path);

    if let Some(params) = params {
        let p = bit_predictability(corpus, layout, params);
        let path = dir.join("predictability.csv");
        let mut wtr = csv::Writer::from_writer(inputs::create(&path)?);
        for b in &p.bits {
            let field = layout.fields().iter().find(|f| f.start <= b.bit && b.bit < f.end).map(|f| f.name.clone()).unwrap_or_default();
            let strongest = b.coefficients.iter().copied().max_by(|x, y| x.1.total_cmp(&y.1));
            wtr.serialize(PredictabilityRow {
                bit: b.bit,
                field,
                score: b.score,
                strongest_input: strongest.map(|s| s.0),
                strongest_weight: strongest.map(|s| s.1),
            })?;
        }
        wtr.flush()?;
        files.push(path);
        if p.low_sample {
            log::warn!("predictability fitted on only {} IDs", p.samples);
        }
    }

    let mut ms_anomaly_fraction = 0.0;
    for field in layout.fields().iter().skip(1) {
        let h = field_histogram(corpus, layout, &field.name)?;
        if field.name == layout.millisecond().name {
            ms_anomaly_fraction = h.anomaly_fraction;
        }
        let path = dir.join(format!("histogram_{}.csv", field.name));
        let mut wtr = csv::Writer::from_writer(inputs::create(&path)?);
        for (&value, &count) in &h.counts {
            wtr.serialize(HistRow { value, count })?;
        }
        wtr.flush()?;
        files.push(path);
    }

    let coverage = coverage_by_label(corpus, layout);
    let path = dir.join("coverage.csv");
    write_coverage(&coverage.iter().map(CoverageRow::from_label).collect::<Vec<_>>(), inputs::create(&path)?)?;
    files.push(path);
    Ok(InferOutputs { catalog, coverage, ms_anomaly_fraction, files })
}

pub fn run(ctx: &Context, args: Args) -> Result<()> {
    let layout = ctx.layout(args.layout.as_deref())?;
    let mut params = ctx.section(|c| &c.infer).training;
    params.seed = ctx.seed;
    let mut manifest = RunManifest::new(ctx, "infer");
    manifest.input(&args.corpus);
    let params = (!args.no_predictability).then_some(&params);
    let files = manifest
        .stage("infer", |counts| {
            let corpus = inputs::read_corpus(&args.corpus)?;
            let out = infer_into(&corpus, &layout, params, &args.out)?;
            counts.insert("corpus".into(), corpus.len().into());
            counts.insert("patterns".into(), out.catalog.len().into());
            counts.insert("ms_anomaly_fraction".into(), out.ms_anomaly_fraction.into());
            Ok(out.files)
        })
        .stage("infer")?;
    for f in &files {
        manifest.output(f);
    }
    manifest.finish(ctx, Some(args.out.join("manifest.json")))
}

pub fn run_coverage(ctx: &Context, args: CoverageArgs) -> Result<()> {
    let layout = ctx.layout(args.layout.as_deref())?;
    let mut manifest = RunManifest::new(ctx, "coverage");
    let (mut rows, catalog) = if let Some(p) = &args.corpus {
        manifest.input(p);
        let corpus = inputs::read_corpus(p)?;
        let rows: Vec<CoverageRow> = coverage_by_label(&corpus, &layout).iter().map(CoverageRow::from_label).collect();
        (rows, build_catalog(&corpus, &layout))
    } else {
        let p = args.catalog.as_ref().expect("clap requires one of corpus/catalog");
        manifest.input(p);
        let catalog = inputs::read_catalog(p)?;
        let e = good_turing_coverage(&catalog).stage("coverage")?;
        let row = CoverageRow {
            label: "all".into(),
            n_posts: e.n_total,
            distinct_patterns: catalog.len(),
            coverage: e.coverage,
            p_unseen: e.p_unseen,
            n_singletons: e.n_singletons,
            upper_bound: e.upper_bound,
            fetch_overlap: None,
        };
        (vec![row], catalog)
    };
    if let Some(p) = &args.holdout {
        manifest.input(p);
        let holdout = inputs::read_corpus(p)?;
        if let Some(pooled) = rows.last_mut() {
            pooled.fetch_overlap = Some(fetch_overlap(&holdout, &catalog, &layout));
        }
    }
    if let Some(pooled) = rows.last() {
        manifest.result("coverage", pooled.coverage);
    }
    write_coverage(&rows, inputs::output(args.out.as_deref())?)?;
    if let Some(p) = &args.out {
        manifest.output(p);
    }
    manifest.finish(ctx, args.out.as_deref().map(beside))
}
