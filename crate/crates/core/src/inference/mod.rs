//! Learning ID structure from an observed corpus.
//!
//! The suffix bits of every ID (everything after the millisecond field) are
//! treated as a categorical type. [`build_catalog`] counts those types,
//! [`good_turing_coverage`] estimates how much probability mass the catalog
//! misses, and [`bit_predictability`] scores how much each bit is implied by
//! the others.

mod logistic;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idcodec::{IdLayout, MILLIS_PER_SECOND};

pub use logistic::TrainingParams;

/// Corpora smaller than this get a low-sample warning from [`bit_predictability`].
pub const MIN_PREDICTABILITY_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("catalog has no observations")]
    EmptyCatalog,
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{0}` is not part of the suffix span")]
    NotSuffixField(String),
    #[error("catalog width {catalog} does not match layout suffix width {layout}")]
    WidthMismatch { catalog: u32, layout: u32 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed catalog row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: u64,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub entity_kind: Option<String>,
}

impl CorpusRecord {
    pub fn new(id: u64) -> Self {
        Self { id, label: None, entity_kind: None }
    }

    pub fn labeled(id: u64, label: impl Into<String>) -> Self {
        Self { id, label: Some(label.into()), entity_kind: None }
    }
}

/// Observed IDs, possibly labeled. Never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdCorpus {
    records: Vec<CorpusRecord>,
}

impl IdCorpus {
    pub fn new(records: Vec<CorpusRecord>) -> Result<Self, InferenceError> {
        if records.is_empty() {
            return Err(InferenceError::EmptyCorpus);
        }
        Ok(Self { records })
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u64>) -> Result<Self, InferenceError> {
        Self::new(ids.into_iter().map(CorpusRecord::new).collect())
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct labels in ascending order; unlabeled records are skipped.
    pub fn labels(&self) -> BTreeSet<&str> {
        self.records.iter().filter_map(|r| r.label.as_deref()).collect()
    }

    /// Sub-corpus of records carrying `label`, if any.
    pub fn with_label(&self, label: &str) -> Option<IdCorpus> {
        let records: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.label.as_deref() == Some(label))
            .cloned()
            .collect();
        IdCorpus::new(records).ok()
    }

    /// Read `id,label,entity_kind` CSV (header required, last two optional).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, InferenceError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let records = rdr.deserialize().collect::<Result<Vec<CorpusRecord>, _>>()?;
        Self::new(records)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), InferenceError> {
        let mut wtr = csv::Writer::from_writer(writer);
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Request/hit counts gathered by the fetch harness for one pattern.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitStats {
    pub requests: u64,
    pub hits: u64,
}

impl HitStats {
    pub fn rate(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.hits as f64 / self.requests as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternEntry {
    pub count: u64,
    pub hits: Option<HitStats>,
}

/// Observed suffix patterns with their occurrence counts, ordered by
/// pattern value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternCatalog {
    width: u32,
    entries: BTreeMap<u64, PatternEntry>,
    total: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogRow {
    pattern_bits: u64,
    width: u32,
    count: u64,
    requests: Option<u64>,
    hits: Option<u64>,
}

impl PatternCatalog {
    pub fn empty(width: u32) -> Self {
        Self { width, entries: BTreeMap::new(), total: 0 }
    }

    /// Catalog from explicit `(pattern, count)` pairs; repeated patterns add
    /// up and zero counts are dropped.
    pub fn from_counts(width: u32, counts: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut catalog = Self::empty(width);
        for (bits, count) in counts {
            catalog.observe_n(bits, count);
        }
        catalog
    }

    fn observe_n(&mut self, bits: u64, count: u64) {
        if count == 0 {
            return;
        }
        self.entries
            .entry(bits)
            .or_insert(PatternEntry { count: 0, hits: None })
            .count += count;
        self.total += count;
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_observations(&self) -> u64 {
        self.total
    }

    pub fn contains(&self, bits: u64) -> bool {
        self.entries.contains_key(&bits)
    }

    pub fn get(&self, bits: u64) -> Option<&PatternEntry> {
        self.entries.get(&bits)
    }

    /// `(pattern, entry)` in ascending pattern order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &PatternEntry)> + '_ {
        self.entries.iter().map(|(&b, e)| (b, e))
    }

    /// Pattern values in ascending order.
    pub fn patterns(&self) -> Vec<u64> {
        self.entries.keys().copied().collect()
    }

    /// Add fetch statistics for a pattern already in the catalog. Returns
    /// `false` (and changes nothing) for unknown patterns.
    pub fn record_hits(&mut self, bits: u64, requests: u64, hits: u64) -> bool {
        match self.entries.get_mut(&bits) {
            Some(entry) => {
                let stats = entry.hits.get_or_insert_with(HitStats::default);
                stats.requests += requests;
                stats.hits += hits;
                true
            }
            None => false,
        }
    }

    /// Same patterns restricted to `keep`.
    pub fn restricted_to(&self, keep: &[u64]) -> PatternCatalog {
        let mut out = Self::empty(self.width);
        for bits in keep {
            if let Some(e) = self.entries.get(bits) {
                out.entries.insert(*bits, *e);
                out.total += e.count;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), InferenceError> {
        let mut wtr = csv::Writer::from_writer(writer);
        for (&bits, e) in &self.entries {
            wtr.serialize(CatalogRow {
                pattern_bits: bits,
                width: self.width,
                count: e.count,
                requests: e.hits.map(|h| h.requests),
                hits: e.hits.map(|h| h.hits),
            })?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Read `pattern_bits,width,count,requests,hits` CSV.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, InferenceError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut width = None;
        let mut catalog = Self::empty(0);
        for (i, row) in rdr.deserialize::<CatalogRow>().enumerate() {
            let row = row?;
            let malformed = |reason: &str| InferenceError::MalformedRow { row: i + 1, reason: reason.to_string() };
            match width {
                None => width = Some(row.width),
                Some(w) if w != row.width => return Err(malformed("inconsistent width")),
                _ => {}
            }
            if row.width == 0 || row.width > 64 || (row.width < 64 && row.pattern_bits >> row.width != 0) {
                return Err(malformed("pattern does not fit its width"));
            }
            if row.count == 0 {
                return Err(malformed("count must be at least 1"));
            }
            if catalog.entries.contains_key(&row.pattern_bits) {
                return Err(malformed("duplicate pattern"));
            }
            let hits = match (row.requests, row.hits) {
                (Some(requests), Some(hits)) if hits <= requests => Some(HitStats { requests, hits }),
                (None, None) => None,
                _ => return Err(malformed("requests/hits must both be present with hits <= requests")),
            };
            catalog.entries.insert(row.pattern_bits, PatternEntry { count: row.count, hits });
            catalog.total += row.count;
        }
        catalog.width = width.unwrap_or(0);
        Ok(catalog)
    }
}

pub fn build_catalog(corpus: &IdCorpus, layout: &IdLayout) -> PatternCatalog {
    let mut catalog = PatternCatalog::empty(layout.suffix_width());
    for id in corpus.ids() {
        catalog.observe_n(layout.suffix_of(id), 1);
    }
    catalog
}

/// Good-Turing missing-mass estimate over a catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageEstimate {
    pub coverage: f64,
    pub p_unseen: f64,
    pub n_singletons: u64,
    pub n_total: u64,
    /// No singletons were observed, so coverage 1.0 is only an upper bound.
    pub upper_bound: bool,
}

/// `P0 = N1 / N`, coverage `1 - P0`.
pub fn good_turing_coverage(catalog: &PatternCatalog) -> Result<CoverageEstimate, InferenceError> {
    let n_total = catalog.total_observations();
    if n_total == 0 {
        return Err(InferenceError::EmptyCatalog);
    }
    let n_singletons = catalog.iter().filter(|(_, e)| e.count == 1).count() as u64;
    let p_unseen = n_singletons as f64 / n_total as f64;
    Ok(CoverageEstimate {
        coverage: 1.0 - p_unseen,
        p_unseen,
        n_singletons,
        n_total,
        upper_bound: n_singletons == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCoverage {
    /// `None` for the pooled row.
    pub label: Option<String>,
    pub n_posts: usize,
    pub distinct_patterns: usize,
    pub estimate: CoverageEstimate,
}

/// Coverage for each labeled sub-corpus, followed by the pooled corpus.
pub fn coverage_by_label(corpus: &IdCorpus, layout: &IdLayout) -> Vec<LabelCoverage> {
    let mut rows = Vec::new();
    let mut push = |label: Option<String>, c: &IdCorpus| {
        let catalog = build_catalog(c, layout);
        rows.push(LabelCoverage {
            label,
            n_posts: c.len(),
            distinct_patterns: catalog.len(),
            estimate: good_turing_coverage(&catalog).expect("non-empty corpus"),
        });
    };
    for label in corpus.labels() {
        if let Some(sub) = corpus.with_label(label) {
            push(Some(label.to_string()), &sub);
        }
    }
    push(None, corpus);
    rows
}

/// Share of corpus IDs whose suffix pattern is present in `catalog`.
pub fn fetch_overlap(corpus: &IdCorpus, catalog: &PatternCatalog, layout: &IdLayout) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let covered = corpus.ids().filter(|&id| catalog.contains(layout.suffix_of(id))).count();
    covered as f64 / corpus.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldHistogram {
    pub field: String,
    pub counts: BTreeMap<u64, u64>,
    pub total: u64,
    /// Share of values >= 1000; only meaningful for the millisecond field.
    pub anomaly_fraction: f64,
}

pub fn field_histogram(corpus: &IdCorpus, layout: &IdLayout, field_name: &str) -> Result<FieldHistogram, InferenceError> {
    let span = layout
        .field(field_name)
        .ok_or_else(|| InferenceError::UnknownField(field_name.to_string()))?;
    let mut counts = BTreeMap::new();
    for id in corpus.ids() {
        *counts.entry(span.extract(id)).or_insert(0u64) += 1;
    }
    let total = corpus.len() as u64;
    let anomaly_fraction = if field_name == layout.millisecond().name {
        let anomalous: u64 = counts.range(MILLIS_PER_SECOND..).map(|(_, c)| c).sum();
        anomalous as f64 / total as f64
    } else {
        0.0
    };
    Ok(FieldHistogram {
        field: field_name.to_string(),
        counts,
        total,
        anomaly_fraction,
    })
}

/// Total-variation distance between the two catalogs' distributions of one
/// suffix field (typically `machine`).
pub fn region_divergence(
    a: &PatternCatalog,
    b: &PatternCatalog,
    layout: &IdLayout,
    field_name: &str,
) -> Result<f64, InferenceError> {
    if layout.field(field_name).is_none() {
        return Err(InferenceError::UnknownField(field_name.to_string()));
    }
    let (shift, mask) = layout
        .suffix_field_slot(field_name)
        .ok_or_else(|| InferenceError::NotSuffixField(field_name.to_string()))?;
    for c in [a, b] {
        if c.total_observations() == 0 {
            return Err(InferenceError::EmptyCatalog);
        }
        if c.width() != layout.suffix_width() {
            return Err(InferenceError::WidthMismatch { catalog: c.width(), layout: layout.suffix_width() });
        }
    }
    let marginal = |c: &PatternCatalog| {
        let mut m: BTreeMap<u64, f64> = BTreeMap::new();
        for (bits, e) in c.iter() {
            *m.entry((bits >> shift) & mask).or_default() += e.count as f64 / c.total_observations() as f64;
        }
        m
    };
    let (ma, mb) = (marginal(a), marginal(b));
    let keys: BTreeSet<u64> = ma.keys().chain(mb.keys()).copied().collect();
    let l1: f64 = keys
        .iter()
        .map(|k| (ma.get(k).copied().unwrap_or(0.0) - mb.get(k).copied().unwrap_or(0.0)).abs())
        .sum();
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BitScore {
    /// MSB-first bit index within the 64-bit ID.
    pub bit: u32,
    /// `None` when the bit is constant across the corpus.
    pub score: Option<f64>,
    /// `(input bit index, |weight|)` for every other non-timestamp bit.
    pub coefficients: Vec<(u32, f64)>,
}

impl BitScore {
    pub fn is_degenerate(&self) -> bool {
        self.score.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BitPredictability {
    pub bits: Vec<BitScore>,
    pub samples: usize,
    pub low_sample: bool,
}

impl BitPredictability {
    pub fn score(&self, bit: u32) -> Option<f64> {
        self.bits.iter().find(|b| b.bit == bit).and_then(|b| b.score)
    }
}

/// Fit one logistic regressor per non-timestamp bit, predicting it from the
/// remaining non-timestamp bits.
pub fn bit_predictability(corpus: &IdCorpus, layout: &IdLayout, params: &TrainingParams) -> BitPredictability {
    let first_bit = layout.timestamp().end;
    let cols = (64 - first_bit) as usize;
    let low_mask = if cols == 64 { u64::MAX } else { (1u64 << cols) - 1 };
    let values: Vec<u64> = corpus.ids().map(|id| id & low_mask).collect();
    let low_sample = values.len() < MIN_PREDICTABILITY_SAMPLES;
    if low_sample {
        log::warn!(
            "bit predictability on {} IDs; at least {} recommended",
            values.len(),
            MIN_PREDICTABILITY_SAMPLES
        );
    }
    let matrix = logistic::BitMatrix::from_values(&values, cols);

    let workers = thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(cols);
    let targets: Vec<usize> = (0..cols).collect();
    let chunk = cols.div_ceil(workers);
    let mut scored: Vec<(usize, Option<logistic::FittedBit>)> = thread::scope(|s| {
        let handles: Vec<_> = targets
            .chunks(chunk)
            .map(|part| {
                let matrix = &matrix;
                s.spawn(move || {
                    part.iter()
                        .map(|&c| {
                            let fit = (!matrix.column_is_constant(c)).then(|| logistic::fit_bit(matrix, c, params));
                            (c, fit)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("regression worker panicked")).collect()
    });
    scored.sort_by_key(|(c, _)| *c);

    let bits = scored
        .into_iter()
        .map(|(c, fit)| {
            let bit = first_bit + c as u32;
            let coefficients = match &fit {
                Some(f) => f
                    .coefficient_magnitudes
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != c)
                    .map(|(i, &w)| (first_bit + i as u32, w))
                    .collect(),
                None => Vec::new(),
            };
            BitScore { bit, score: fit.map(|f| f.score), coefficients }
        })
        .collect();
    BitPredictability { bits, samples: values.len(), low_sample }
}
