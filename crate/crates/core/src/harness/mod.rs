//! Rate-limited fetching of candidate IDs with exactly-once result logging.
//!
//! A pool of `max_in_flight` workers pulls batches of candidates, probes each
//! through a [`Fetcher`], and hands results to a single aggregator which
//! restores candidate order before writing to the [`ResultSink`]. Transport
//! errors are retried with jittered exponential backoff; platform statuses
//! are never retried.

mod http;
mod rate;
pub mod sink;
mod status;

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::bounded;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idcodec::IdLayout;
use crate::inference::{HitStats, PatternCatalog};

pub use http::{HttpFetcher, HttpProbeConfig};
pub use rate::RateLimiter;
pub use sink::{JsonlSink, MemorySink, ResultSink, SinkRecord};
pub use status::{
    classify_error, classify_statuses, FetchStatus, ERROR_PRIORITY, ITEM_NOT_EXIST_RAW, TRANSPORT_STATUS,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("sink failure after {completed} completed candidates: {source}")]
    SinkFailure {
        completed: u64,
        #[source]
        source: io::Error,
    },
    #[error("invalid fetch policy: {0}")]
    InvalidPolicy(String),
    #[error("no ground truth available")]
    NoGroundTruth,
    #[error("http fetcher: {0}")]
    Http(String),
}

/// Post metadata returned for a visible post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub id: u64,
    /// Platform-reported creation time in epoch seconds. Scheduled posts
    /// report their release time, which can be later than the ID time.
    pub create_time_metadata: u64,
    #[serde(default)]
    pub location_created: Option<String>,
    pub view_count: u64,
    pub like_count: u64,
    pub share_count: u64,
    pub comment_count: u64,
    pub duration_seconds: f64,
    #[serde(default)]
    pub aigc_flag: bool,
    pub author_id: u64,
}

/// What a fetcher saw for one request.
#[derive(Debug, Clone, PartialEq)]
pub enum RawResponse {
    Found(MetadataRecord),
    /// One or more raw status strings from the platform.
    Statuses(Vec<String>),
    NotExist,
    /// Network-level failure; retried by the harness.
    Transport(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchResponse {
    pub raw: RawResponse,
    pub fetched_at: u64,
}

/// Anything that can probe a single ID.
pub trait Fetcher: Send + Sync {
    fn fetch(&self, id: u64) -> FetchResponse;
}

impl<F: Fetcher + ?Sized> Fetcher for &F {
    fn fetch(&self, id: u64) -> FetchResponse {
        (**self).fetch(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchResult {
    pub id: u64,
    pub status: FetchStatus,
    pub fetched_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<MetadataRecord>,
    /// Raw strings, kept only when several were reported or none matched.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_statuses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchPolicy {
    pub max_in_flight: usize,
    /// Use `inf` for no cap.
    pub requests_per_second_cap: f64,
    pub retry_limit: u32,
    /// Base of the exponential backoff, in seconds.
    pub retry_backoff: f64,
    pub seed: u64,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            max_in_flight: 16,
            requests_per_second_cap: 50.0,
            retry_limit: 3,
            retry_backoff: 1.0,
            seed: 0,
        }
    }
}

impl FetchPolicy {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidPolicy(m.to_string()));
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be positive");
        }
        if !(self.requests_per_second_cap > 0.0) {
            return bad("requests_per_second_cap must be positive");
        }
        if self.retry_limit == 0 {
            return bad("retry_limit must be positive");
        }
        if !(self.retry_backoff > 0.0) || !self.retry_backoff.is_finite() {
            return bad("retry_backoff must be a positive number of seconds");
        }
        Ok(())
    }

    /// Delay before retry number `attempt` (0-based) of `id`:
    /// `base * 2^attempt * U(0.5, 1.5)`, seeded per `(seed, id, attempt)`.
    pub fn backoff(&self, id: u64, attempt: u32) -> Duration {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ id.rotate_left(17) ^ u64::from(attempt));
        let jitter: f64 = rng.random_range(0.5..1.5);
        Duration::from_secs_f64(self.retry_backoff * 2f64.powi(attempt as i32) * jitter)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub layout: IdLayout,
    /// Write a checkpoint record whenever the global completed count is a
    /// multiple of this.
    pub checkpoint_every: u64,
    /// Candidates already in the sink (from [`JsonlSink::completed`]); the
    /// caller must have skipped them in the candidate stream.
    pub already_completed: u64,
    /// Stop after this many candidates in this invocation.
    pub stop_after: Option<u64>,
    pub batch_size: usize,
}

impl RunOptions {
    pub fn new(layout: IdLayout) -> Self {
        Self {
            layout,
            checkpoint_every: 10_000,
            already_completed: 0,
            stop_after: None,
            batch_size: 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub candidates: u64,
    pub status_counts: BTreeMap<String, u64>,
    pub hits: u64,
    pub hit_rate: f64,
    pub elapsed_seconds: f64,
    pub throughput: f64,
    /// Requests and hits per suffix pattern.
    #[serde(skip)]
    pub pattern_stats: BTreeMap<u64, HitStats>,
    /// Global completed count including earlier invocations.
    pub completed_total: u64,
}

impl RunSummary {
    fn add(&mut self, r: &FetchResult, layout: &IdLayout) {
        self.candidates += 1;
        *self.status_counts.entry(r.status.to_string()).or_default() += 1;
        let stats = self.pattern_stats.entry(layout.suffix_of(r.id)).or_default();
        stats.requests += 1;
        if r.status.is_hit() {
            self.hits += 1;
            stats.hits += 1;
        }
    }

    fn finish(&mut self, elapsed: Duration) {
        self.hit_rate = if self.candidates == 0 { 0.0 } else { self.hits as f64 / self.candidates as f64 };
        self.elapsed_seconds = elapsed.as_secs_f64();
        self.throughput = if self.elapsed_seconds > 0.0 { self.candidates as f64 / self.elapsed_seconds } else { 0.0 };
    }

    /// Fold per-pattern request/hit counts into the catalog. Returns the
    /// number of patterns the catalog did not know.
    pub fn fold_into(&self, catalog: &mut PatternCatalog) -> usize {
        self.pattern_stats
            .iter()
            .filter(|(&bits, s)| !catalog.record_hits(bits, s.requests, s.hits))
            .count()
    }
}

/// Summary over an already-collected result set (e.g. a whole sink).
pub fn summarize_results<'a>(results: impl IntoIterator<Item = &'a FetchResult>, layout: &IdLayout) -> RunSummary {
    let mut s = RunSummary::default();
    for r in results {
        s.add(r, layout);
    }
    s.completed_total = s.candidates;
    s.finish(Duration::ZERO);
    s
}

fn fetch_one<F: Fetcher + ?Sized>(fetcher: &F, limiter: &RateLimiter, policy: &FetchPolicy, id: u64) -> FetchResult {
    let mut attempt = 0;
    loop {
        limiter.acquire();
        let resp = fetcher.fetch(id);
        let (status, metadata, raw_statuses) = match resp.raw {
            RawResponse::Transport(msg) => {
                if attempt < policy.retry_limit {
                    thread::sleep(policy.backoff(id, attempt));
                    attempt += 1;
                    continue;
                }
                (FetchStatus::Other(TRANSPORT_STATUS.to_string()), None, vec![msg])
            }
            RawResponse::Found(meta) => (FetchStatus::Ok, Some(meta), Vec::new()),
            RawResponse::NotExist => (FetchStatus::ItemNotExist, None, Vec::new()),
            RawResponse::Statuses(raws) => {
                let status = classify_statuses(&raws);
                let keep = raws.len() > 1 || matches!(status, FetchStatus::Other(_));
                (status, None, if keep { raws } else { Vec::new() })
            }
        };
        return FetchResult { id, status, fetched_at: resp.fetched_at, metadata, raw_statuses };
    }
}

/// Probe every candidate, writing exactly one result per candidate to `sink`
/// in candidate order. A run cut short by `stop_after` ends with a pause
/// record; one that drains its candidates ends with a checkpoint.
pub fn run_fetch<I, F, S>(
    candidates: I,
    fetcher: &F,
    policy: &FetchPolicy,
    sink: &mut S,
    opts: &RunOptions,
) -> Result<RunSummary, HarnessError>
where
    I: Iterator<Item = u64> + Send,
    F: Fetcher + ?Sized,
    S: ResultSink + ?Sized,
{
    policy.validate()?;
    let started = Instant::now();
    let limiter = RateLimiter::new(policy.requests_per_second_cap, policy.max_in_flight);
    let batch_size = opts.batch_size.max(1);
    let every = opts.checkpoint_every.max(1);
    let limit = opts.stop_after.unwrap_or(u64::MAX);
    let mut summary = RunSummary::default();
    let mut completed = opts.already_completed;
    let exhausted = AtomicBool::new(false);

    let outcome = thread::scope(|scope| -> Result<(), HarnessError> {
        let (job_tx, job_rx) = bounded::<(u64, Vec<u64>)>(policy.max_in_flight * 2);
        let (res_tx, res_rx) = bounded::<(u64, Vec<FetchResult>)>(policy.max_in_flight * 2);

        let exhausted = &exhausted;
        scope.spawn(move || {
            let mut candidates = candidates;
            let mut remaining = limit;
            for batch_no in 0u64.. {
                let take = remaining.min(batch_size as u64) as usize;
                let batch: Vec<u64> = candidates.by_ref().take(take).collect();
                remaining -= batch.len() as u64;
                if batch.len() < take || (remaining == 0 && candidates.next().is_none()) {
                    exhausted.store(true, Ordering::Relaxed);
                }
                if batch.is_empty() || job_tx.send((batch_no, batch)).is_err() || remaining == 0 {
                    break;
                }
            }
        });
        for _ in 0..policy.max_in_flight {
            let (job_rx, res_tx, limiter) = (job_rx.clone(), res_tx.clone(), &limiter);
            scope.spawn(move || {
                for (batch_no, batch) in job_rx {
                    let results = batch.into_iter().map(|id| fetch_one(fetcher, limiter, policy, id)).collect();
                    if res_tx.send((batch_no, results)).is_err() {
                        break;
                    }
                }
            });
        }
        drop((job_rx, res_tx));

        let sink_err = |completed: u64, source| HarnessError::SinkFailure { completed, source };
        let mut pending: BTreeMap<u64, Vec<FetchResult>> = BTreeMap::new();
        let mut next = 0u64;
        let mut checkpointed = opts.already_completed;
        for (batch_no, results) in res_rx {
            pending.insert(batch_no, results);
            while let Some(results) = pending.remove(&next) {
                next += 1;
                for r in &results {
                    sink.write(r).map_err(|e| sink_err(checkpointed, e))?;
                    summary.add(r, &opts.layout);
                    completed += 1;
                    if completed % every == 0 {
                        sink.checkpoint(completed).map_err(|e| sink_err(checkpointed, e))?;
                        checkpointed = completed;
                    }
                }
            }
        }
        if completed != checkpointed {
            if exhausted.load(Ordering::Relaxed) {
                sink.checkpoint(completed).map_err(|e| sink_err(checkpointed, e))?;
            } else {
                sink.pause(completed).map_err(|e| sink_err(checkpointed, e))?;
            }
        }
        Ok(())
    });
    outcome?;

    summary.completed_total = completed;
    summary.finish(started.elapsed());
    Ok(summary)
}

/// One row of the hidden-status table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub status: FetchStatus,
    pub count: u64,
    /// Percent of posts that existed at some point.
    pub pct: f64,
}

/// Counts of every non-ok, non-`item_not_exist` status, as a percentage of
/// posts that existed at some point (ok plus all such statuses). Transport
/// failures are excluded from both. Sorted by count, descending.
pub fn summarize_errors<'a>(results: impl IntoIterator<Item = &'a FetchResult>) -> Vec<ErrorRow> {
    let mut counts: BTreeMap<FetchStatus, u64> = BTreeMap::new();
    let mut ok = 0u64;
    for r in results {
        match &r.status {
            FetchStatus::Ok => ok += 1,
            FetchStatus::ItemNotExist => {}
            s if s.is_transport_failure() => {}
            s => *counts.entry(s.clone()).or_default() += 1,
        }
    }
    let denominator = ok + counts.values().sum::<u64>();
    let mut rows: Vec<ErrorRow> = counts
        .into_iter()
        .map(|(status, count)| ErrorRow { status, count, pct: 100.0 * count as f64 / denominator as f64 })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.status.cmp(&b.status)));
    rows
}

/// Write the error table as `Status,Count,Pct` CSV.
pub fn write_error_table<W: io::Write>(rows: &[ErrorRow], writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["Status", "Count", "Pct"])?;
    for r in rows {
        wtr.write_record([r.status.as_str().to_string(), r.count.to_string(), format!("{:.2}", r.pct)])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Share of true posts that the run found (visible or with a hidden status).
pub fn compute_recall<'a>(
    results: impl IntoIterator<Item = &'a FetchResult>,
    truth: &HashSet<u64>,
) -> Result<f64, HarnessError> {
    if truth.is_empty() {
        return Err(HarnessError::NoGroundTruth);
    }
    let found: HashSet<u64> = results
        .into_iter()
        .filter(|r| r.status.is_hit() && truth.contains(&r.id))
        .map(|r| r.id)
        .collect();
    Ok(found.len() as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;
    use std::sync::Mutex;

    /// Even IDs exist, multiples of 10 are deleted.
    struct Parity;

    impl Fetcher for Parity {
        fn fetch(&self, id: u64) -> FetchResponse {
            let raw = if id % 10 == 0 {
                RawResponse::Statuses(vec!["status_deleted".into()])
            } else if id % 2 == 0 {
                RawResponse::Found(MetadataRecord {
                    id,
                    create_time_metadata: 0,
                    location_created: None,
                    view_count: 1,
                    like_count: 0,
                    share_count: 0,
                    comment_count: 0,
                    duration_seconds: 1.0,
                    aigc_flag: false,
                    author_id: 9,
                })
            } else {
                RawResponse::NotExist
            };
            FetchResponse { raw, fetched_at: 42 }
        }
    }

    fn fast_policy() -> FetchPolicy {
        FetchPolicy { max_in_flight: 4, requests_per_second_cap: f64::INFINITY, retry_backoff: 0.001, ..FetchPolicy::default() }
    }

    fn result(id: u64, status: FetchStatus) -> FetchResult {
        FetchResult { id, status, fetched_at: 0, metadata: None, raw_statuses: Vec::new() }
    }

    #[test]
    fn every_candidate_yields_one_ordered_result() {
        let mut sink = MemorySink::default();
        let mut opts = RunOptions::new(IdLayout::default());
        opts.batch_size = 7;
        opts.checkpoint_every = 25;
        let summary = run_fetch(0..100u64, &Parity, &fast_policy(), &mut sink, &opts).unwrap();
        assert_eq!(sink.results.iter().map(|r| r.id).collect::<Vec<_>>(), (0..100).collect::<Vec<_>>());
        assert_eq!(sink.checkpoints, vec![25, 50, 75, 100]);
        assert_eq!(summary.candidates, 100);
        assert_eq!(summary.hits, 50);
        assert_eq!(summary.hit_rate, 0.5);
        assert_eq!(summary.status_counts["status_deleted"], 10);
        assert_eq!(summary.status_counts["item_not_exist"], 50);
    }

    #[test]
    fn empty_stream() {
        let mut sink = MemorySink::default();
        let summary = run_fetch(std::iter::empty(), &Parity, &fast_policy(), &mut sink, &RunOptions::new(IdLayout::default())).unwrap();
        assert!(sink.results.is_empty());
        assert!(sink.checkpoints.is_empty());
        assert_eq!(summary.candidates, 0);
        assert_eq!(summary.hit_rate, 0.0);
        assert!(summarize_errors(&sink.results).is_empty());
    }

    struct Flaky {
        failures_per_id: u32,
        calls: Mutex<BTreeMap<u64, u32>>,
    }

    impl Fetcher for Flaky {
        fn fetch(&self, id: u64) -> FetchResponse {
            let mut calls = self.calls.lock().unwrap();
            let n = calls.entry(id).or_default();
            *n += 1;
            let raw = if *n <= self.failures_per_id { RawResponse::Transport("reset".into()) } else { RawResponse::NotExist };
            FetchResponse { raw, fetched_at: 0 }
        }
    }

    #[test]
    fn transport_errors_retry_then_give_up() {
        let policy = FetchPolicy { retry_limit: 2, ..fast_policy() };
        let opts = RunOptions::new(IdLayout::default());

        let recovering = Flaky { failures_per_id: 2, calls: Mutex::default() };
        let mut sink = MemorySink::default();
        run_fetch(0..5u64, &recovering, &policy, &mut sink, &opts).unwrap();
        assert!(sink.results.iter().all(|r| r.status == FetchStatus::ItemNotExist));
        assert!(recovering.calls.lock().unwrap().values().all(|&n| n == 3));

        let dead = Flaky { failures_per_id: 99, calls: Mutex::default() };
        let mut sink = MemorySink::default();
        run_fetch(0..5u64, &dead, &policy, &mut sink, &opts).unwrap();
        assert!(sink.results.iter().all(|r| r.status == FetchStatus::Other("transport".into())));
        assert_eq!(sink.results[0].raw_statuses, vec!["reset".to_string()]);
        assert!(dead.calls.lock().unwrap().values().all(|&n| n == 3));
    }

    struct CountingStatus(AtomicU32);

    impl Fetcher for CountingStatus {
        fn fetch(&self, _id: u64) -> FetchResponse {
            self.0.fetch_add(1, Ordering::SeqCst);
            FetchResponse { raw: RawResponse::Statuses(vec!["status_reviewing".into()]), fetched_at: 0 }
        }
    }

    #[test]
    fn taxonomy_statuses_are_not_retried() {
        let f = CountingStatus(AtomicU32::new(0));
        let mut sink = MemorySink::default();
        run_fetch(0..10u64, &f, &fast_policy(), &mut sink, &RunOptions::new(IdLayout::default())).unwrap();
        assert_eq!(f.0.load(Ordering::SeqCst), 10);
    }

    struct BrokenSink {
        writes_left: usize,
    }

    impl ResultSink for BrokenSink {
        fn write(&mut self, _r: &FetchResult) -> io::Result<()> {
            if self.writes_left == 0 {
                return Err(io::Error::other("disk full"));
            }
            self.writes_left -= 1;
            Ok(())
        }
        fn checkpoint(&mut self, _completed: u64) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn sink_failure_reports_last_checkpoint() {
        let mut opts = RunOptions::new(IdLayout::default());
        opts.checkpoint_every = 10;
        opts.batch_size = 3;
        let err = run_fetch(0..1000u64, &Parity, &fast_policy(), &mut BrokenSink { writes_left: 35 }, &opts).unwrap_err();
        assert!(matches!(err, HarnessError::SinkFailure { completed: 30, .. }), "{err}");
    }

    #[test]
    fn stop_after_limits_the_run() {
        let mut sink = MemorySink::default();
        let mut opts = RunOptions::new(IdLayout::default());
        opts.stop_after = Some(13);
        opts.already_completed = 100;
        opts.checkpoint_every = 5;
        let s = run_fetch(100..200u64, &Parity, &fast_policy(), &mut sink, &opts).unwrap();
        assert_eq!(s.candidates, 13);
        assert_eq!(s.completed_total, 113);
        assert_eq!(sink.checkpoints, vec![105, 110]);
        assert_eq!(sink.pauses, vec![113]);
    }

    #[test]
    fn stop_at_the_last_candidate_finishes_normally() {
        let mut sink = MemorySink::default();
        let mut opts = RunOptions::new(IdLayout::default());
        opts.stop_after = Some(13);
        opts.checkpoint_every = 5;
        opts.batch_size = 4;
        run_fetch(0..13u64, &Parity, &fast_policy(), &mut sink, &opts).unwrap();
        assert_eq!(sink.checkpoints, vec![5, 10, 13]);
        assert!(sink.pauses.is_empty());
    }

    #[test]
    fn policy_validation_and_backoff() {
        assert!(FetchPolicy::default().validate().is_ok());
        assert!(FetchPolicy { max_in_flight: 0, ..FetchPolicy::default() }.validate().is_err());
        assert!(FetchPolicy { requests_per_second_cap: 0.0, ..FetchPolicy::default() }.validate().is_err());
        assert!(FetchPolicy { retry_limit: 0, ..FetchPolicy::default() }.validate().is_err());
        let p = FetchPolicy::default();
        assert_eq!(p.backoff(5, 1), p.backoff(5, 1));
        let d = p.backoff(5, 2).as_secs_f64();
        assert!((2.0..6.0).contains(&d), "{d}");
    }

    #[test]
    fn error_table_denominator() {
        let mut results = Vec::new();
        results.extend((0..5).map(|i| result(i, FetchStatus::Ok)));
        results.extend((5..8).map(|i| result(i, FetchStatus::StatusDeleted)));
        results.extend((8..100).map(|i| result(i, FetchStatus::ItemNotExist)));
        let rows = summarize_errors(&results);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].status, FetchStatus::StatusDeleted);
        assert_eq!(rows[0].count, 3);
        assert!((rows[0].pct - 37.5).abs() < 1e-12);
        let mut csv = Vec::new();
        write_error_table(&rows, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "Status,Count,Pct\nstatus_deleted,3,37.50\n");
    }

    #[test]
    fn error_table_sorted_by_count() {
        let results = vec![
            result(1, FetchStatus::StatusReviewing),
            result(2, FetchStatus::StatusSelfSee),
            result(3, FetchStatus::StatusSelfSee),
            result(4, FetchStatus::Other("transport".into())),
        ];
        let rows = summarize_errors(&results);
        assert_eq!(rows.iter().map(|r| r.status.clone()).collect::<Vec<_>>(), vec![FetchStatus::StatusSelfSee, FetchStatus::StatusReviewing]);
        assert!((rows[0].pct - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn recall_counts_hits_against_truth() {
        let truth: HashSet<u64> = [1, 2, 3, 4].into();
        let results = vec![
            result(1, FetchStatus::Ok),
            result(2, FetchStatus::StatusDeleted),
            result(3, FetchStatus::ItemNotExist),
            result(9, FetchStatus::Ok),
        ];
        assert_eq!(compute_recall(&results, &truth).unwrap(), 0.5);
        assert!(matches!(compute_recall(&results, &HashSet::new()), Err(HarnessError::NoGroundTruth)));
    }

    #[test]
    fn pattern_stats_fold_into_catalog() {
        let layout = IdLayout::default();
        let ids: Vec<u64> = (0..4).flat_map(|ms| [layout.compose(10, ms, 2).unwrap(), layout.compose(10, ms, 3).unwrap()]).collect();
        let mut sink = MemorySink::default();
        let summary = run_fetch(ids.into_iter(), &Parity, &fast_policy(), &mut sink, &RunOptions::new(layout)).unwrap();
        let mut catalog = PatternCatalog::from_counts(22, [(2, 1)]);
        assert_eq!(summary.fold_into(&mut catalog), 1);
        let stats = catalog.get(2).unwrap().hits.unwrap();
        assert_eq!(stats.requests, 4);
    }
}
