//! Seeded ground-truth platform that mints Snowflake-style IDs.
//!
//! Every second of the horizon is an independent shard whose posts are a pure
//! function of the config and the second, so any slice of the platform can be
//! regenerated on demand. Generation runs in two passes over separate random
//! streams: the first draws arrivals, milliseconds, machines and counter
//! values (enough to know every ID), the second dresses each post with
//! country, lifecycle and engagement.

mod config;

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::TimeRange;
use crate::harness::{classify_error, FetchResponse, FetchStatus, Fetcher, MetadataRecord, RawResponse};
use crate::idcodec::{CreateTime, IdLayout};
use crate::inference::{CorpusRecord, IdCorpus, InferenceError};

pub use config::{
    spike_to_scheduled_fraction, ArrivalProfile, DeletionGrowth, EngagementConfig, LifecycleConfig, MachineSpec,
    SequenceBehavior, SimConfig, DEFAULT_DAILY_TOTAL, DEFAULT_HORIZON_START, DIURNAL_SHAPE,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// One generated post with its whole lifecycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPost {
    pub id: u64,
    /// ID-embedded creation second.
    pub create_time: u64,
    pub millisecond: u64,
    /// Second reported in metadata; later than `create_time` for scheduled
    /// posts.
    pub metadata_create_time: u64,
    pub machine: u64,
    pub sequence: u64,
    pub region: String,
    pub country: String,
    pub scheduled: bool,
    /// Hidden state held from creation on, if any.
    #[serde(with = "status_cell")]
    pub hidden_status: Option<FetchStatus>,
    /// Epoch second from which the post reports `status_deleted`.
    pub deleted_at: Option<u64>,
    pub view_count: u64,
    pub like_count: u64,
    pub share_count: u64,
    pub comment_count: u64,
    pub duration_seconds: f64,
    pub aigc_flag: bool,
    pub author_id: u64,
}

mod status_cell {
    use super::*;

    pub fn serialize<S: serde::Serializer>(s: &Option<FetchStatus>, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(s.as_ref().map_or("", |s| s.as_str()))
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(de: D) -> Result<Option<FetchStatus>, D::Error> {
        let raw = String::deserialize(de)?;
        Ok((!raw.is_empty()).then(|| classify_error(&raw)))
    }
}

impl SimPost {
    pub fn id_create_time(&self) -> CreateTime {
        CreateTime { seconds: self.create_time, millisecond: self.millisecond }
    }

    /// Visibility when probed at epoch second `at`.
    pub fn status_at(&self, at: u64) -> FetchStatus {
        match (&self.hidden_status, self.deleted_at) {
            (Some(s), _) => s.clone(),
            (None, Some(d)) if at >= d => FetchStatus::StatusDeleted,
            _ => FetchStatus::Ok,
        }
    }

    pub fn metadata(&self) -> MetadataRecord {
        MetadataRecord {
            id: self.id,
            create_time_metadata: self.metadata_create_time,
            location_created: Some(self.country.clone()),
            view_count: self.view_count,
            like_count: self.like_count,
            share_count: self.share_count,
            comment_count: self.comment_count,
            duration_seconds: self.duration_seconds,
            aigc_flag: self.aigc_flag,
            author_id: self.author_id,
        }
    }
}

/// ID plus the index of the machine that minted it.
#[derive(Debug, Clone, Copy)]
struct Minted {
    id: u64,
    millisecond: u16,
    machine: u16,
    sequence: u32,
}

struct RegionTable {
    countries: Vec<String>,
    pick: WeightedIndex<f64>,
}

#[derive(Default)]
struct ShardCache {
    shards: HashMap<u64, Arc<Vec<SimPost>>>,
    order: VecDeque<u64>,
}

/// An immutable simulated platform, safe to share across fetch workers.
pub struct SimulatedPlatform {
    config: SimConfig,
    sequence_slot: (u32, u64),
    machine_slot: (u32, u64),
    fixed_bits: u64,
    machine_pick: WeightedAliasIndex<f64>,
    machine_region: Vec<usize>,
    regions: Vec<(String, RegionTable)>,
    views: LogNormal<f64>,
    durations: LogNormal<f64>,
    cache: Mutex<ShardCache>,
}

impl std::fmt::Debug for SimulatedPlatform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimulatedPlatform").field("config", &self.config).finish_non_exhaustive()
    }
}

const DURATION_SIGMA: f64 = 0.8;

impl SimulatedPlatform {
    pub fn build(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let layout = &config.layout;
        let slot = |name: &str| layout.suffix_field_slot(name).expect("validated");
        let fixed_bits = config
            .fixed_fields
            .iter()
            .fold(0u64, |acc, (name, &v)| acc | (v << slot(name).0));

        let bad = |m: String| SimError::InvalidConfig(vec![m]);
        let machine_pick = WeightedAliasIndex::new(config.machines.iter().map(|m| m.weight).collect())
            .map_err(|e| bad(format!("machines: {e}")))?;
        let mut regions: Vec<(String, RegionTable)> = Vec::new();
        let mut machine_region = Vec::with_capacity(config.machines.len());
        for m in &config.machines {
            let idx = match regions.iter().position(|(r, _)| r == &m.region) {
                Some(i) => i,
                None => {
                    let mix = &config.country_mix[&m.region];
                    let pick = WeightedIndex::new(mix.values().copied())
                        .map_err(|e| bad(format!("country_mix.{}: {e}", m.region)))?;
                    regions.push((m.region.clone(), RegionTable { countries: mix.keys().cloned().collect(), pick }));
                    regions.len() - 1
                }
            };
            machine_region.push(idx);
        }

        let e = &config.engagement;
        let nonzero_mean = (e.mean_views / (1.0 - e.zero_view_fraction)).max(f64::MIN_POSITIVE);
        let views = LogNormal::new(nonzero_mean.ln() - e.view_sigma * e.view_sigma / 2.0, e.view_sigma)
            .map_err(|err| bad(format!("engagement: {err}")))?;
        let durations = LogNormal::new(e.mean_duration_seconds.ln() - DURATION_SIGMA * DURATION_SIGMA / 2.0, DURATION_SIGMA)
            .map_err(|err| bad(format!("engagement: {err}")))?;

        Ok(Self {
            sequence_slot: slot(&config.sequence_field),
            machine_slot: slot(&config.machine_field),
            fixed_bits,
            machine_pick,
            machine_region,
            regions,
            views,
            durations,
            cache: Mutex::new(ShardCache::default()),
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn layout(&self) -> &IdLayout {
        &self.config.layout
    }

    pub fn horizon(&self) -> TimeRange {
        self.config.horizon
    }

    fn rng(&self, second: u64, pass: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(second.wrapping_mul(2).wrapping_add(pass));
        rng
    }

    /// First pass: every ID minted in `second`, sorted.
    fn mint(&self, second: u64) -> Vec<Minted> {
        if !self.config.horizon.contains_second(second) {
            return Vec::new();
        }
        let rate = self.config.arrival.rate_at(second);
        if rate <= 0.0 {
            return Vec::new();
        }
        let mut rng = self.rng(second, 0);
        let n = Poisson::new(rate).expect("positive finite rate").sample(&mut rng) as usize;

        // (millisecond, machine, arrival order) packed for one sort.
        let mut arrivals: Vec<u64> = (0..n as u64)
            .map(|i| {
                let ms: u64 = rng.random_range(0..1000);
                let machine = self.machine_pick.sample(&mut rng) as u64;
                (ms << 48) | (machine << 32) | i
            })
            .collect();
        arrivals.sort_unstable();

        let SequenceBehavior { skip_probability, max_skip } = self.config.sequence;
        let (seq_shift, seq_mask) = self.sequence_slot;
        let machine_shift = self.machine_slot.0;
        let layout = &self.config.layout;
        let mut out = Vec::with_capacity(n);
        let mut group = u64::MAX;
        let mut seq = 0u64;
        for key in arrivals {
            let (ms, machine) = (key >> 48, (key >> 32) & 0xFFFF);
            if key >> 32 != group {
                group = key >> 32;
                seq = 0;
            } else if seq <= seq_mask {
                seq += if skip_probability > 0.0 && rng.random_bool(skip_probability) {
                    rng.random_range(2..=max_skip)
                } else {
                    1
                };
            }
            if seq > seq_mask {
                // Counter exhausted for this millisecond: the post is dropped.
                continue;
            }
            let value = self.config.machines[machine as usize].value;
            let suffix = self.fixed_bits | (seq << seq_shift) | (value << machine_shift);
            out.push(Minted {
                id: layout.compose_unchecked(second, ms, suffix),
                millisecond: ms as u16,
                machine: machine as u16,
                sequence: seq as u32,
            });
        }
        out.sort_unstable_by_key(|m| m.id);
        out
    }

    /// Second pass: attach attributes. Posts are dressed in ID order.
    fn dress(&self, second: u64, minted: &[Minted]) -> Vec<SimPost> {
        let mut rng = self.rng(second, 1);
        let cfg = &self.config;
        let lc = &cfg.lifecycle;
        let hidden = lc.hidden();
        let hidden_floor = 1.0 - lc.hidden_total();
        let e = &cfg.engagement;
        minted
            .iter()
            .map(|m| {
                let region = &self.regions[self.machine_region[m.machine as usize]];
                let country = region.1.countries[region.1.pick.sample(&mut rng)].clone();

                let scheduled = cfg.scheduled_fraction > 0.0 && rng.random_bool(cfg.scheduled_fraction);
                let metadata_create_time = if scheduled { (second / 60 + 1) * 60 } else { second };

                let u: f64 = rng.random();
                let (hidden_status, deleted_at) = if u >= hidden_floor {
                    let mut edge = hidden_floor;
                    let status = hidden
                        .iter()
                        .find(|(_, p)| {
                            edge += p;
                            u < edge
                        })
                        .map_or(hidden[hidden.len() - 1].0.clone(), |(s, _)| s.clone());
                    (Some(status), None)
                } else {
                    (None, lc.deletion.deletion_day(u).map(|d| second + (d * 86_400.0) as u64))
                };

                let view_count = if rng.random_bool(e.zero_view_fraction) {
                    0
                } else {
                    let boost = if scheduled { e.scheduled_view_multiplier } else { 1.0 };
                    (self.views.sample(&mut rng) * boost).round() as u64
                };
                let like_count = (view_count as f64 * rng.random_range(0.0..0.16)) as u64;
                let comment_count = (like_count as f64 * rng.random_range(0.0..0.06)) as u64;
                let share_count = (like_count as f64 * rng.random_range(0.0..0.12)) as u64;
                let duration_seconds = (self.durations.sample(&mut rng) * 10.0).round().max(1.0) / 10.0;

                SimPost {
                    id: m.id,
                    create_time: second,
                    millisecond: u64::from(m.millisecond),
                    metadata_create_time,
                    machine: cfg.machines[m.machine as usize].value,
                    sequence: u64::from(m.sequence),
                    region: region.0.clone(),
                    country,
                    scheduled,
                    hidden_status,
                    deleted_at,
                    view_count,
                    like_count,
                    share_count,
                    comment_count,
                    duration_seconds,
                    aigc_flag: rng.random_bool(e.aigc_fraction),
                    author_id: rng.random_range(1..=e.authors),
                }
            })
            .collect()
    }

    /// All posts created in `second`, sorted by ID.
    pub fn posts_at(&self, second: u64) -> Vec<SimPost> {
        self.dress(second, &self.mint(second))
    }

    fn cached_posts_at(&self, second: u64) -> Arc<Vec<SimPost>> {
        if let Some(shard) = self.cache.lock().expect("cache poisoned").shards.get(&second) {
            return Arc::clone(shard);
        }
        let shard = Arc::new(self.posts_at(second));
        let mut cache = self.cache.lock().expect("cache poisoned");
        if cache.shards.insert(second, Arc::clone(&shard)).is_none() {
            cache.order.push_back(second);
            while cache.order.len() > self.config.cache_seconds {
                let evicted = cache.order.pop_front().expect("non-empty");
                cache.shards.remove(&evicted);
            }
        }
        shard
    }

    /// Number of posts created in `second`.
    pub fn second_count(&self, second: u64) -> usize {
        self.mint(second).len()
    }

    pub fn count_in(&self, range: TimeRange) -> u64 {
        (range.start..range.end).map(|s| self.second_count(s) as u64).sum()
    }

    /// IDs of every post in `range`, in ID order.
    pub fn ids_in(&self, range: TimeRange) -> impl Iterator<Item = u64> + '_ {
        (range.start..range.end).flat_map(move |s| self.mint(s).into_iter().map(|m| m.id))
    }

    /// Every post in `range`, in ID order.
    pub fn posts_in(&self, range: TimeRange) -> impl Iterator<Item = SimPost> + '_ {
        (range.start..range.end).flat_map(move |s| self.posts_at(s))
    }

    pub fn post(&self, id: u64) -> Option<SimPost> {
        let second = self.config.layout.timestamp_of(id);
        if !self.config.horizon.contains_second(second) {
            return None;
        }
        let shard = self.cached_posts_at(second);
        shard.binary_search_by_key(&id, |p| p.id).ok().map(|i| shard[i].clone())
    }

    /// What probing `id` at epoch second `at` returns.
    pub fn sim_fetch(&self, id: u64, at: u64) -> RawResponse {
        let second = self.config.layout.timestamp_of(id);
        if !self.config.horizon.contains_second(second) || at < second {
            return RawResponse::NotExist;
        }
        let shard = self.cached_posts_at(second);
        match shard.binary_search_by_key(&id, |p| p.id) {
            Err(_) => RawResponse::NotExist,
            Ok(i) => match shard[i].status_at(at) {
                FetchStatus::Ok => RawResponse::Found(shard[i].metadata()),
                status => RawResponse::Statuses(vec![status.as_str().to_string()]),
            },
        }
    }

    /// Write every post of `range` as CSV. Returns the row count.
    pub fn export_ground_truth<W: Write>(&self, range: TimeRange, writer: W) -> Result<u64, SimError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut n = 0;
        for post in self.posts_in(range) {
            wtr.serialize(&post)?;
            n += 1;
        }
        if n == 0 {
            wtr.write_record(GROUND_TRUTH_HEADER)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(n)
    }

    /// Uniform sample of `n` post IDs from `range` labelled by region (all
    /// posts if fewer exist), in ID order.
    pub fn sample_corpus(&self, range: TimeRange, n: usize, seed: u64) -> Result<IdCorpus, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reservoir: Vec<(u64, u16)> = Vec::with_capacity(n);
        let mut seen = 0u64;
        for second in range.start..range.end {
            for m in self.mint(second) {
                seen += 1;
                if reservoir.len() < n {
                    reservoir.push((m.id, m.machine));
                } else {
                    let j = rng.random_range(0..seen);
                    if (j as usize) < n {
                        reservoir[j as usize] = (m.id, m.machine);
                    }
                }
            }
        }
        reservoir.sort_unstable();
        let records = reservoir
            .into_iter()
            .map(|(id, machine)| CorpusRecord::labeled(id, self.regions[self.machine_region[machine as usize]].0.clone()))
            .collect();
        Ok(IdCorpus::new(records)?)
    }
}

const GROUND_TRUTH_HEADER: [&str; 18] = [
    "id",
    "create_time",
    "millisecond",
    "metadata_create_time",
    "machine",
    "sequence",
    "region",
    "country",
    "scheduled",
    "hidden_status",
    "deleted_at",
    "view_count",
    "like_count",
    "share_count",
    "comment_count",
    "duration_seconds",
    "aigc_flag",
    "author_id",
];

/// Read a ground-truth export back.
pub fn read_ground_truth<R: Read>(reader: R) -> Result<Vec<SimPost>, SimError> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

/// When a simulated fetch happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchClock {
    /// Every probe happens at this epoch second.
    At(u64),
    /// Each probe happens this many seconds after the candidate's ID time.
    AfterCreation(u64),
}

/// In-process fetcher backed by a simulated platform.
pub struct SimFetcher<'a> {
    platform: &'a SimulatedPlatform,
    clock: FetchClock,
}

impl<'a> SimFetcher<'a> {
    pub fn new(platform: &'a SimulatedPlatform, clock: FetchClock) -> Self {
        Self { platform, clock }
    }
}

impl Fetcher for SimFetcher<'_> {
    fn fetch(&self, id: u64) -> FetchResponse {
        let at = match self.clock {
            FetchClock::At(t) => t,
            FetchClock::AfterCreation(d) => self.platform.layout().timestamp_of(id).saturating_add(d),
        };
        FetchResponse { raw: self.platform.sim_fetch(id, at), fetched_at: at }
    }
}
