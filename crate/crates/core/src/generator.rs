//! Candidate-ID enumeration over a time window.
//!
//! Every `(second, millisecond, pattern)` triple in the window produces one
//! candidate. The stream is lazy and can be stopped and resumed from a
//! [`Checkpoint`] without changing the emitted sequence.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idcodec::{IdLayout, MILLIS_PER_SECOND};
use crate::inference::{HitStats, PatternCatalog};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("catalog has no patterns")]
    EmptyCatalog,
    #[error("pattern {0} has no fetch statistics")]
    NoHitStats(u64),
    #[error("no pattern has any hits")]
    NoHits,
    #[error("invalid time range: {0}")]
    InvalidRange(String),
    #[error("target capture must be in (0, 1], got {0}")]
    InvalidTarget(f64),
    #[error("checkpoint {0:?} is outside the enumeration")]
    BadCheckpoint(Checkpoint),
    #[error("catalog pattern {pattern} does not fit the {width}-bit suffix")]
    PatternTooWide { pattern: u64, width: u32 },
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint decode: {0}")]
    Json(#[from] serde_json::Error),
}

/// Half-open window `[start, end)` of epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: u64,
    pub end: u64,
    #[serde(default = "default_stride")]
    pub millisecond_stride: u64,
}

fn default_stride() -> u64 {
    1
}

impl TimeRange {
    pub fn new(start: u64, end: u64) -> Result<Self, GeneratorError> {
        Self::with_stride(start, end, 1)
    }

    pub fn with_stride(start: u64, end: u64, millisecond_stride: u64) -> Result<Self, GeneratorError> {
        if start >= end {
            return Err(GeneratorError::InvalidRange(format!("start {start} must be before end {end}")));
        }
        if millisecond_stride == 0 {
            return Err(GeneratorError::InvalidRange("stride must be at least 1".into()));
        }
        Ok(Self { start, end, millisecond_stride })
    }

    pub fn seconds(&self) -> u64 {
        self.end - self.start
    }

    /// Millisecond slots visited per second, `ceil(1000 / stride)`.
    pub fn slots_per_second(&self) -> u64 {
        MILLIS_PER_SECOND.div_ceil(self.millisecond_stride)
    }

    pub fn contains_second(&self, second: u64) -> bool {
        (self.start..self.end).contains(&second)
    }

    /// Split into at most `parts` contiguous sub-ranges of whole seconds.
    pub fn split(&self, parts: usize) -> Vec<TimeRange> {
        let parts = (parts.max(1) as u64).min(self.seconds());
        let base = self.seconds() / parts;
        let extra = self.seconds() % parts;
        let mut out = Vec::with_capacity(parts as usize);
        let mut start = self.start;
        for i in 0..parts {
            let len = base + u64::from(i < extra);
            out.push(TimeRange { start, end: start + len, millisecond_stride: self.millisecond_stride });
            start += len;
        }
        out
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for TimeRange {
    type Err = GeneratorError;

    /// `START..END` in epoch seconds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| GeneratorError::InvalidRange(format!("expected START..END, got `{s}`")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| GeneratorError::InvalidRange(format!("`{t}`: {e}")))
        };
        TimeRange::new(parse(a)?, parse(b)?)
    }
}

/// Position of the next candidate to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch_second: u64,
    pub millisecond: u64,
    pub pattern_index: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), GeneratorError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GeneratorError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Lazy `(time, pattern)`-ordered candidate IDs.
#[derive(Debug, Clone)]
pub struct CandidateStream {
    range: TimeRange,
    patterns: Arc<[u64]>,
    ts_shift: u32,
    ms_shift: u32,
    second: u64,
    millisecond: u64,
    pattern_index: usize,
}

impl CandidateStream {
    pub fn new(range: TimeRange, catalog: &PatternCatalog, layout: &IdLayout) -> Result<Self, GeneratorError> {
        Self::from_patterns(range, catalog.patterns(), layout)
    }

    /// Stream over an explicit pattern list (e.g. the output of
    /// [`select_patterns`]). Patterns are emitted in the given order.
    pub fn from_patterns(range: TimeRange, patterns: Vec<u64>, layout: &IdLayout) -> Result<Self, GeneratorError> {
        if patterns.is_empty() {
            return Err(GeneratorError::EmptyCatalog);
        }
        let width = layout.suffix_width();
        if let Some(&p) = patterns.iter().find(|&&p| width < 64 && p >> width != 0) {
            return Err(GeneratorError::PatternTooWide { pattern: p, width });
        }
        if range.end - 1 > layout.timestamp().mask() {
            return Err(GeneratorError::InvalidRange(format!("{range} exceeds the timestamp field")));
        }
        Ok(Self {
            range,
            patterns: patterns.into(),
            ts_shift: layout.timestamp().shift(),
            ms_shift: layout.millisecond().shift(),
            second: range.start,
            millisecond: 0,
            pattern_index: 0,
        })
    }

    pub fn resume(
        range: TimeRange,
        catalog: &PatternCatalog,
        layout: &IdLayout,
        checkpoint: Checkpoint,
    ) -> Result<Self, GeneratorError> {
        let mut stream = Self::new(range, catalog, layout)?;
        stream.restore(checkpoint)?;
        Ok(stream)
    }

    pub fn range(&self) -> TimeRange {
        self.range
    }

    pub fn patterns(&self) -> &[u64] {
        &self.patterns
    }

    /// Total number of candidates in the full enumeration.
    pub fn total(&self) -> u64 {
        self.range.seconds() * self.range.slots_per_second() * self.patterns.len() as u64
    }

    /// Index of the next candidate within the full enumeration.
    pub fn position(&self) -> u64 {
        let per_second = self.range.slots_per_second() * self.patterns.len() as u64;
        (self.second - self.range.start) * per_second
            + (self.millisecond / self.range.millisecond_stride) * self.patterns.len() as u64
            + self.pattern_index as u64
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch_second: self.second,
            millisecond: self.millisecond,
            pattern_index: self.pattern_index,
        }
    }

    pub fn restore(&mut self, cp: Checkpoint) -> Result<(), GeneratorError> {
        let at_end = cp.epoch_second == self.range.end && cp.millisecond == 0 && cp.pattern_index == 0;
        let inside = self.range.contains_second(cp.epoch_second)
            && cp.millisecond < MILLIS_PER_SECOND
            && cp.millisecond % self.range.millisecond_stride == 0
            && cp.pattern_index < self.patterns.len();
        if !(at_end || inside) {
            return Err(GeneratorError::BadCheckpoint(cp));
        }
        self.second = cp.epoch_second;
        self.millisecond = cp.millisecond;
        self.pattern_index = cp.pattern_index;
        Ok(())
    }

    /// Jump to absolute position `index` (clamped to the end).
    pub fn seek(&mut self, index: u64) {
        let index = index.min(self.total());
        let n = self.patterns.len() as u64;
        let per_second = self.range.slots_per_second() * n;
        self.second = self.range.start + index / per_second;
        let within = index % per_second;
        self.millisecond = (within / n) * self.range.millisecond_stride;
        self.pattern_index = (within % n) as usize;
    }

    pub fn is_finished(&self) -> bool {
        self.second >= self.range.end
    }
}

impl Iterator for CandidateStream {
    type Item = u64;

    #[inline]
    fn next(&mut self) -> Option<u64> {
        if self.second >= self.range.end {
            return None;
        }
        let id = (self.second << self.ts_shift)
            | (self.millisecond << self.ms_shift)
            | self.patterns[self.pattern_index];
        self.pattern_index += 1;
        if self.pattern_index == self.patterns.len() {
            self.pattern_index = 0;
            self.millisecond += self.range.millisecond_stride;
            if self.millisecond >= MILLIS_PER_SECOND {
                self.millisecond = 0;
                self.second += 1;
            }
        }
        Some(id)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total() - self.position()) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for CandidateStream {}

/// Patterns ranked by descending hit rate, ties by ascending pattern value.
fn ranked_patterns(catalog: &PatternCatalog) -> Result<Vec<(u64, HitStats)>, GeneratorError> {
    if catalog.is_empty() {
        return Err(GeneratorError::EmptyCatalog);
    }
    let mut ranked = Vec::with_capacity(catalog.len());
    for (bits, entry) in catalog.iter() {
        match entry.hits {
            Some(h) if h.requests >= 1 => ranked.push((bits, h)),
            _ => return Err(GeneratorError::NoHitStats(bits)),
        }
    }
    ranked.sort_by(|(pa, a), (pb, b)| {
        let lhs = a.hits as u128 * b.requests as u128;
        let rhs = b.hits as u128 * a.requests as u128;
        rhs.cmp(&lhs).then(pa.cmp(pb))
    });
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternSelection {
    /// Chosen patterns, in rank order.
    pub patterns: Vec<u64>,
    pub expected_success_rate: f64,
    pub expected_capture: f64,
}

/// Greedily take the highest hit-rate patterns until their share of all
/// observed hits reaches `target_capture`.
pub fn select_patterns(catalog: &PatternCatalog, target_capture: f64) -> Result<PatternSelection, GeneratorError> {
    if !(target_capture > 0.0 && target_capture <= 1.0) {
        return Err(GeneratorError::InvalidTarget(target_capture));
    }
    let ranked = ranked_patterns(catalog)?;
    let total_hits: u64 = ranked.iter().map(|(_, h)| h.hits).sum();
    if total_hits == 0 {
        return Err(GeneratorError::NoHits);
    }
    let (mut hits, mut requests) = (0u64, 0u64);
    let mut patterns = Vec::new();
    for (bits, h) in ranked {
        patterns.push(bits);
        hits += h.hits;
        requests += h.requests;
        if hits as f64 / total_hits as f64 >= target_capture - 1e-12 {
            break;
        }
    }
    Ok(PatternSelection {
        patterns,
        expected_success_rate: hits as f64 / requests as f64,
        expected_capture: hits as f64 / total_hits as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub patterns_used: usize,
    pub request_success_rate: f64,
    pub capture_fraction: f64,
}

/// Success rate vs capture trade-off, one point per prefix of the ranked
/// pattern list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitRateCurve {
    pub points: Vec<CurvePoint>,
}

pub fn hit_rate_curve(catalog: &PatternCatalog) -> Result<HitRateCurve, GeneratorError> {
    let ranked = ranked_patterns(catalog)?;
    let total_hits: u64 = ranked.iter().map(|(_, h)| h.hits).sum();
    if total_hits == 0 {
        return Err(GeneratorError::NoHits);
    }
    let (mut hits, mut requests) = (0u64, 0u64);
    let points = ranked
        .iter()
        .enumerate()
        .map(|(i, (_, h))| {
            hits += h.hits;
            requests += h.requests;
            CurvePoint {
                patterns_used: i + 1,
                request_success_rate: hits as f64 / requests as f64,
                capture_fraction: hits as f64 / total_hits as f64,
            }
        })
        .collect();
    Ok(HitRateCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idcodec::decode;

    fn catalog(patterns: impl IntoIterator<Item = u64>) -> PatternCatalog {
        PatternCatalog::from_counts(22, patterns.into_iter().map(|p| (p, 1)))
    }

    fn with_hits(stats: &[(u64, u64, u64)]) -> PatternCatalog {
        let mut c = catalog(stats.iter().map(|s| s.0));
        for &(p, req, hit) in stats {
            c.record_hits(p, req, hit);
        }
        c
    }

    #[test]
    fn one_second_of_504_patterns() {
        let layout = IdLayout::default();
        let cat = catalog((0..504).map(|i| i * 31));
        let stream = CandidateStream::new(TimeRange::new(1712768400, 1712768401).unwrap(), &cat, &layout).unwrap();
        assert_eq!(stream.total(), 504_000);
        assert_eq!(stream.len(), 504_000);
        assert_eq!(stream.count(), 504_000);
    }

    #[test]
    fn empty_catalog_is_an_error() {
        let r = TimeRange::new(0, 10).unwrap();
        assert!(matches!(
            CandidateStream::new(r, &PatternCatalog::empty(22), &IdLayout::default()),
            Err(GeneratorError::EmptyCatalog)
        ));
    }

    #[test]
    fn hand_enumerated_stride_1000() {
        let layout = IdLayout::default();
        let cat = catalog([3, 1, 2]);
        let range = TimeRange::with_stride(500, 502, 1000).unwrap();
        let ids: Vec<u64> = CandidateStream::new(range, &cat, &layout).unwrap().collect();
        let want: Vec<u64> = [(500, 1), (500, 2), (500, 3), (501, 1), (501, 2), (501, 3)]
            .iter()
            .map(|&(s, p)| layout.compose(s, 0, p).unwrap())
            .collect();
        assert_eq!(ids, want);
        for id in ids {
            let d = decode(id, &layout);
            assert!(range.contains_second(d.epoch_seconds));
        }
    }

    #[test]
    fn stride_rounds_slots_up() {
        let r = TimeRange::with_stride(0, 1, 300).unwrap();
        assert_eq!(r.slots_per_second(), 4);
        let ms: Vec<u64> = CandidateStream::new(r, &catalog([0]), &IdLayout::default())
            .unwrap()
            .map(|id| IdLayout::default().millisecond_of(id))
            .collect();
        assert_eq!(ms, vec![0, 300, 600, 900]);
    }

    #[test]
    fn seek_and_checkpoint_agree_with_sequential_run() {
        let layout = IdLayout::default();
        let cat = catalog([5, 9, 11]);
        let range = TimeRange::with_stride(10, 13, 7).unwrap();
        let full: Vec<u64> = CandidateStream::new(range, &cat, &layout).unwrap().collect();
        for cut in [0u64, 1, 2, 3, 428, 429, 430, 999, full.len() as u64] {
            let mut s = CandidateStream::new(range, &cat, &layout).unwrap();
            s.seek(cut);
            assert_eq!(s.position(), cut);
            let cp = s.checkpoint();
            let resumed = CandidateStream::resume(range, &cat, &layout, cp).unwrap();
            assert_eq!(resumed.collect::<Vec<_>>(), full[cut as usize..]);
        }
    }

    #[test]
    fn bad_checkpoints_rejected() {
        let layout = IdLayout::default();
        let cat = catalog([5, 9]);
        let range = TimeRange::with_stride(10, 12, 2).unwrap();
        for cp in [
            Checkpoint { epoch_second: 9, millisecond: 0, pattern_index: 0 },
            Checkpoint { epoch_second: 10, millisecond: 1, pattern_index: 0 },
            Checkpoint { epoch_second: 10, millisecond: 0, pattern_index: 2 },
            Checkpoint { epoch_second: 12, millisecond: 2, pattern_index: 0 },
        ] {
            assert!(CandidateStream::resume(range, &cat, &layout, cp).is_err(), "{cp:?}");
        }
        let end = Checkpoint { epoch_second: 12, millisecond: 0, pattern_index: 0 };
        assert_eq!(CandidateStream::resume(range, &cat, &layout, end).unwrap().count(), 0);
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.json");
        let cp = Checkpoint { epoch_second: 77, millisecond: 12, pattern_index: 3 };
        cp.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), cp);
    }

    #[test]
    fn split_partitions_cover_range() {
        let r = TimeRange::new(100, 110).unwrap();
        let parts = r.split(3);
        assert_eq!(parts.iter().map(|p| p.seconds()).collect::<Vec<_>>(), vec![4, 3, 3]);
        assert_eq!(parts[0].start, 100);
        assert_eq!(parts[2].end, 110);
        assert_eq!(r.split(50).len(), 10);
    }

    #[test]
    fn range_parsing() {
        assert_eq!("5..9".parse::<TimeRange>().unwrap(), TimeRange::new(5, 9).unwrap());
        assert!("9..5".parse::<TimeRange>().is_err());
        assert!("9-5".parse::<TimeRange>().is_err());
    }

    #[test]
    fn selection_arithmetic() {
        let cat = with_hits(&[(1, 100, 90), (2, 100, 9), (3, 100, 1)]);
        let sel = select_patterns(&cat, 0.9).unwrap();
        assert_eq!(sel.patterns, vec![1]);
        assert_eq!(sel.expected_capture, 0.9);
        assert_eq!(sel.expected_success_rate, 0.9);

        let all = with_hits(&[(1, 10, 4), (2, 10, 0), (3, 10, 2)]);
        let sel = select_patterns(&all, 1.0).unwrap();
        assert_eq!(sel.patterns, vec![1, 3]);
        assert_eq!(sel.expected_capture, 1.0);
    }

    #[test]
    fn selection_errors() {
        assert!(matches!(select_patterns(&catalog([1]), 0.5), Err(GeneratorError::NoHitStats(1))));
        let cat = with_hits(&[(1, 10, 0)]);
        assert!(matches!(select_patterns(&cat, 0.5), Err(GeneratorError::NoHits)));
        assert!(matches!(select_patterns(&cat, 0.0), Err(GeneratorError::InvalidTarget(_))));
        assert!(matches!(select_patterns(&cat, 1.5), Err(GeneratorError::InvalidTarget(_))));
    }

    #[test]
    fn curve_arithmetic() {
        let single = with_hits(&[(4, 10, 3)]);
        let c = hit_rate_curve(&single).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.points[0].capture_fraction, 1.0);

        let two = with_hits(&[(8, 100, 10), (2, 100, 90)]);
        let c = hit_rate_curve(&two).unwrap();
        let got: Vec<(usize, f64, f64)> = c
            .points
            .iter()
            .map(|p| (p.patterns_used, p.request_success_rate, p.capture_fraction))
            .collect();
        assert_eq!(got, vec![(1, 0.9, 0.9), (2, 0.5, 1.0)]);
    }

    #[test]
    fn ties_rank_by_pattern_value() {
        let cat = with_hits(&[(9, 10, 5), (3, 20, 10), (5, 10, 5)]);
        assert_eq!(select_patterns(&cat, 1.0).unwrap().patterns, vec![3, 5, 9]);
    }
}
