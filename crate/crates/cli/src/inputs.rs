//! File formats shared by several subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use idslice::harness::sink::read_results;
use idslice::harness::FetchResult;
use idslice::idcodec::{CreateTime, IdLayout};
use idslice::inference::{IdCorpus, PatternCatalog};
use idslice::simulator::{read_ground_truth, SimPost};

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// A file, or stdout when `path` is `None`.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn read_corpus(path: &Path) -> Result<IdCorpus> {
    IdCorpus::read_csv(open(path)?).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn read_catalog(path: &Path) -> Result<PatternCatalog> {
    PatternCatalog::read_csv(open(path)?).with_context(|| format!("reading catalog {}", path.display()))
}

pub fn write_catalog(path: &Path, catalog: &PatternCatalog) -> Result<()> {
    let mut w = create(path)?;
    catalog.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Newline-delimited decimal IDs; blank lines and `#` comments are skipped.
pub fn read_candidates(path: &Path) -> Result<Vec<u64>> {
    let mut ids = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        ids.push(t.parse().with_context(|| format!("{}:{}: `{t}` is not an ID", path.display(), i + 1))?);
    }
    Ok(ids)
}

pub fn read_sink(path: &Path) -> Result<Vec<FetchResult>> {
    read_results(path)
        .with_context(|| format!("opening sink {}", path.display()))?
        .collect::<io::Result<Vec<_>>>()
        .with_context(|| format!("reading sink {}", path.display()))
}

pub fn read_truth(path: &Path) -> Result<Vec<SimPost>> {
    read_ground_truth(open(path)?).with_context(|| format!("reading ground truth {}", path.display()))
}

/// One existing (or once existing) post as seen by the stats commands.
#[derive(Debug, Clone)]
pub struct Observation {
    pub id: u64,
    pub created: CreateTime,
    pub country: Option<String>,
    pub metadata_time: Option<u64>,
    pub views: Option<u64>,
}

/// Posts from a fetch sink (`.jsonl`, hits only) or ground truth (`.csv`).
pub fn read_observations(path: &Path, layout: &IdLayout) -> Result<Vec<Observation>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => Ok(observations(&read_sink(path)?, layout)),
        Some("csv") => Ok(read_truth(path)?
            .into_iter()
            .map(|p| Observation {
                id: p.id,
                created: layout.create_time_of(p.id),
                country: Some(p.country),
                metadata_time: Some(p.metadata_create_time),
                views: Some(p.view_count),
            })
            .collect()),
        _ => bail!("{}: expected a .jsonl fetch sink or a .csv ground-truth export", path.display()),
    }
}

/// Hits of a fetch run; metadata fields are set for visible posts only.
pub fn observations(results: &[FetchResult], layout: &IdLayout) -> Vec<Observation> {
    results
        .iter()
        .filter(|r| r.status.is_hit())
        .map(|r| {
            let m = r.metadata.as_ref();
            Observation {
                id: r.id,
                created: layout.create_time_of(r.id),
                country: m.and_then(|m| m.location_created.clone()),
                metadata_time: m.map(|m| m.create_time_metadata),
                views: m.map(|m| m.view_count),
            }
        })
        .collect()
}

/// Posts per country among the hits that came back with metadata.
pub fn country_counts(obs: &[Observation]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for c in obs.iter().filter_map(|o| o.country.as_ref()) {
        *counts.entry(c.clone()).or_insert(0) += 1;
    }
    counts
}
