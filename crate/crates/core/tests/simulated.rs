//! Property checks of the estimators and inference code against simulator
//! ground truth.

use std::collections::{BTreeMap, HashSet};

use idslice::estimators::{
    bucket_volume, country_corrected_counts, deletion_rate_curve, prevalence_ci, BucketWidth, PrevalenceInput,
};
use idslice::generator::{select_patterns, CandidateStream, TimeRange};
use idslice::harness::{run_fetch, FetchPolicy, MemorySink, RunOptions};
use idslice::inference::{
    bit_predictability, build_catalog, fetch_overlap, field_histogram, region_divergence, IdCorpus, TrainingParams,
};
use idslice::simulator::{
    ArrivalProfile, DeletionGrowth, FetchClock, LifecycleConfig, MachineSpec, SequenceBehavior, SimConfig, SimFetcher,
    SimulatedPlatform, DEFAULT_HORIZON_START,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const T0: u64 = DEFAULT_HORIZON_START;

fn window(offset: u64, seconds: u64) -> TimeRange {
    TimeRange::new(T0 + offset, T0 + offset + seconds).unwrap()
}

fn policy() -> FetchPolicy {
    FetchPolicy { requests_per_second_cap: f64::INFINITY, ..FetchPolicy::default() }
}

fn machines(n: u64) -> Vec<MachineSpec> {
    let regions = ["us", "eu", "sg"];
    (0..n)
        .map(|i| MachineSpec { value: i + 1, region: regions[i as usize % 3].into(), weight: 1.0 / (i + 1) as f64 })
        .collect()
}

fn platform(seed: u64, rate: f64, horizon: TimeRange) -> SimulatedPlatform {
    SimulatedPlatform::build(SimConfig { seed, arrival: ArrivalProfile::constant(rate), horizon, ..SimConfig::default() })
        .unwrap()
}

#[test]
fn constant_rate_hour_matches_poisson_mean_and_buckets_conserve() {
    let p = platform(21, 3300.0, window(0, 3600));
    let layout = p.layout();
    let hour = p.horizon();
    let per_second = bucket_volume(p.ids_in(hour), layout, BucketWidth::Second, hour);
    let per_minute = bucket_volume(p.ids_in(hour), layout, BucketWidth::Minute, hour);

    let expected = 3300.0 * 3600.0;
    let total = per_second.total() as f64;
    assert!((total - expected).abs() <= 3.0 * expected.sqrt(), "{total} posts in the hour");
    let mean = per_second.mean();
    assert!((mean - 3300.0).abs() <= 3.0 * (3300.0f64 / 3600.0).sqrt(), "per-second mean {mean}");
    assert_eq!(per_minute.total(), per_second.total());
    assert_eq!(per_second.coarsen(BucketWidth::Minute).unwrap(), per_minute);

    let minute42 = window(42 * 60, 60);
    let mut exported = Vec::new();
    let n = p.export_ground_truth(minute42, &mut exported).unwrap();
    let from_series = per_minute.buckets().find(|&(start, _)| start == minute42.start).unwrap().1;
    assert_eq!(n, from_series);
}

#[test]
fn machine_shares_follow_weights() {
    let config = SimConfig {
        seed: 22,
        arrival: ArrivalProfile::constant(2000.0),
        horizon: window(0, 60),
        machines: vec![
            MachineSpec { value: 5, region: "us".into(), weight: 1.0 },
            MachineSpec { value: 9, region: "us".into(), weight: 3.0 },
        ],
        ..SimConfig::default()
    };
    let p = SimulatedPlatform::build(config).unwrap();
    let machine = p.layout().field("machine").unwrap().clone();
    let (mut n, mut on_five) = (0u64, 0u64);
    for id in p.ids_in(p.horizon()) {
        n += 1;
        on_five += (machine.extract(id) == 5) as u64;
    }
    let share = on_five as f64 / n as f64;
    let sigma = (0.25 * 0.75 / n as f64).sqrt();
    assert!(n > 100_000);
    assert!((share - 0.25).abs() <= 3.0 * sigma, "share {share} over {n} posts");
}

#[test]
fn milliseconds_are_uniform() {
    let p = platform(23, 2000.0, window(0, 60));
    let layout = p.layout();
    let mut counts = [0u64; 1000];
    let mut n = 0u64;
    for id in p.ids_in(p.horizon()) {
        counts[layout.millisecond_of(id) as usize] += 1;
        n += 1;
    }
    assert!(n >= 100_000);
    let e = n as f64 / 1000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let critical = ChiSquared::new(999.0).unwrap().inverse_cdf(0.999);
    assert!(chi2 < critical, "chi2 {chi2:.1} >= {critical:.1}");
}

#[test]
fn simulator_corpus_has_no_millisecond_anomalies() {
    let p = platform(24, 1000.0, window(0, 30));
    let corpus = p.sample_corpus(p.horizon(), 10_000, 24).unwrap();
    let hist = field_histogram(&corpus, p.layout(), "millisecond").unwrap();
    assert_eq!(hist.total, 10_000);
    assert_eq!(hist.anomaly_fraction, 0.0);
    assert!(hist.counts.keys().all(|&ms| ms < 1000));
}

#[test]
fn timestamp_free_bits_split_into_noise_and_structure() {
    let config = SimConfig {
        seed: 25,
        arrival: ArrivalProfile::constant(3300.0),
        horizon: window(0, 10),
        ..SimConfig::default()
    };
    let p = SimulatedPlatform::build(config).unwrap();
    let layout = p.layout().clone();
    let corpus = p.sample_corpus(p.horizon(), 10_000, 25).unwrap();
    let scores = bit_predictability(&corpus, &layout, &TrainingParams::default());
    assert!(!scores.low_sample);

    let span = |name: &str| {
        let f = layout.field(name).unwrap();
        f.start..f.end
    };
    for bit in span("millisecond") {
        let s = scores.score(bit);
        assert!(s.is_some_and(|s| s < 0.1), "millisecond bit {bit} scored {s:?}");
    }
    // The default machines carry a one-hot region code in their top three
    // bits; worker numbers and counters below it are drawn independently.
    let machine = span("machine");
    for bit in machine.start..machine.start + 3 {
        let s = scores.score(bit);
        assert!(s.is_some_and(|s| s > 0.5), "region bit {bit} scored {s:?}");
    }
    for bit in span("entity_type") {
        assert_eq!(scores.score(bit), None, "constant entity bits are degenerate");
    }
}

#[test]
fn half_shared_machines_give_half_divergence() {
    let config = SimConfig {
        seed: 26,
        arrival: ArrivalProfile::constant(1500.0),
        horizon: window(0, 20),
        machines: (1..=3).map(|v| MachineSpec { value: v, region: "us".into(), weight: 1.0 }).collect(),
        ..SimConfig::default()
    };
    let p = SimulatedPlatform::build(config).unwrap();
    let layout = p.layout().clone();
    let machine = layout.field("machine").unwrap().clone();
    let ids: Vec<u64> = p.ids_in(p.horizon()).collect();
    let on = |keep: [u64; 2]| {
        let picked = ids.iter().copied().filter(|&id| keep.contains(&machine.extract(id)));
        build_catalog(&IdCorpus::from_ids(picked).unwrap(), &layout)
    };
    let tv = region_divergence(&on([1, 2]), &on([2, 3]), &layout, "machine").unwrap();
    assert!((tv - 0.5).abs() < 0.01, "tv {tv}");
}

#[test]
fn selection_at_99_percent_holds_on_a_fresh_hour() {
    let config = SimConfig {
        seed: 27,
        arrival: ArrivalProfile::constant(1000.0),
        horizon: window(0, 3660),
        sequence: SequenceBehavior { skip_probability: 0.3, max_skip: 12 },
        machines: machines(250),
        ..SimConfig::default()
    };
    let p = SimulatedPlatform::build(config).unwrap();
    let layout = p.layout().clone();

    // Learn patterns from 30 seconds, measure their hit rates on the next 30.
    let calibration = window(0, 60);
    let mut catalog = build_catalog(&IdCorpus::from_ids(p.ids_in(window(0, 30))).unwrap(), &layout);
    let stream = CandidateStream::new(window(30, 30), &catalog, &layout).unwrap();
    let fetcher = SimFetcher::new(&p, FetchClock::AfterCreation(86_400));
    let mut sink = MemorySink::default();
    let summary = run_fetch(stream, &fetcher, &policy(), &mut sink, &RunOptions::new(layout.clone())).unwrap();
    summary.fold_into(&mut catalog);
    let chosen = select_patterns(&catalog, 0.99).unwrap();
    assert!(chosen.patterns.len() < catalog.len());

    // Capture over the next hour, relative to what the full catalog reaches.
    let fresh = TimeRange::new(calibration.end, calibration.end + 3600).unwrap();
    let keep: HashSet<u64> = chosen.patterns.iter().copied().collect();
    let (mut full, mut selected) = (0u64, 0u64);
    for id in p.ids_in(fresh) {
        let s = layout.suffix_of(id);
        if catalog.contains(s) {
            full += 1;
            selected += keep.contains(&s) as u64;
        }
    }
    let capture = selected as f64 / full as f64;
    assert!(capture >= 0.985, "capture {capture:.4} with {} of {} patterns", keep.len(), catalog.len());

    // The counting shortcut agrees with a real enumeration of one second.
    let second = TimeRange::new(fresh.start, fresh.start + 1).unwrap();
    let stream = CandidateStream::from_patterns(second, chosen.patterns.clone(), &layout).unwrap();
    let mut sink = MemorySink::default();
    let s = run_fetch(stream, &fetcher, &policy(), &mut sink, &RunOptions::new(layout.clone())).unwrap();
    let counted = p.ids_in(second).filter(|id| keep.contains(&layout.suffix_of(*id))).count() as u64;
    assert_eq!(s.hits, counted);
}

#[test]
fn sparse_density_gives_expected_hit_rate() {
    // 100 equal machines at 800 posts/s: the first counter slot of each
    // machine-millisecond is occupied with probability 1 - exp(-0.008).
    let config = SimConfig {
        seed: 28,
        arrival: ArrivalProfile::constant(800.0),
        horizon: window(0, 2),
        sequence: SequenceBehavior { skip_probability: 0.0, max_skip: 2 },
        machines: (1..=100).map(|v| MachineSpec { value: v, region: "us".into(), weight: 1.0 }).collect(),
        ..SimConfig::default()
    };
    let p = SimulatedPlatform::build(config).unwrap();
    let layout = p.layout().clone();
    let (shift, _) = layout.suffix_field_slot("machine").unwrap();
    let (entity_shift, _) = layout.suffix_field_slot("entity_type").unwrap();
    let patterns: Vec<u64> = (1..=100u64).map(|m| (m << shift) | (13 << entity_shift)).collect();
    let stream = CandidateStream::from_patterns(window(0, 1), patterns, &layout).unwrap();
    assert_eq!(stream.total(), 100_000);
    let fetcher = SimFetcher::new(&p, FetchClock::AfterCreation(86_400));
    let mut sink = MemorySink::default();
    let s = run_fetch(stream, &fetcher, &policy(), &mut sink, &RunOptions::new(layout)).unwrap();
    assert!((s.hit_rate - 0.008).abs() <= 0.001, "hit rate {}", s.hit_rate);
}

#[test]
fn deletion_share_grows_with_fetch_delay() {
    let growth = DeletionGrowth::default();
    let config = SimConfig {
        seed: 29,
        arrival: ArrivalProfile::constant(1000.0),
        horizon: window(0, 20),
        lifecycle: LifecycleConfig { deletion: growth, ..LifecycleConfig::default() },
        ..SimConfig::default()
    };
    let p = SimulatedPlatform::build(config).unwrap();
    let layout = p.layout().clone();
    let ids: Vec<u64> = p.ids_in(p.horizon()).collect();
    let mut previous = 0.0;
    for days in [1u64, 10, 26, 100, 215, 300] {
        let fetcher = SimFetcher::new(&p, FetchClock::AfterCreation(days * 86_400));
        let mut sink = MemorySink::default();
        run_fetch(ids.iter().copied(), &fetcher, &policy(), &mut sink, &RunOptions::new(layout.clone())).unwrap();
        let curve = deletion_rate_curve(&sink.results, &layout);
        assert_eq!(curve.len(), 1, "one delay partition per run");
        let point = &curve[0];
        assert_eq!(point.delay_days, days);
        assert_eq!(point.ever_existing as usize, ids.len());
        let want = growth.share_at(days as f64);
        let sigma = (want * (1.0 - want) / ids.len() as f64).sqrt().max(1e-9);
        assert!((point.deleted_share - want).abs() <= 4.0 * sigma, "day {days}: {} vs {want}", point.deleted_share);
        assert!(point.deleted_share >= previous);
        previous = point.deleted_share;
    }
}

#[test]
fn coverage_corrected_country_counts_recover_truth() {
    let config = SimConfig {
        seed: 30,
        arrival: ArrivalProfile::constant(3300.0),
        horizon: window(0, 90),
        sequence: SequenceBehavior { skip_probability: 0.3, max_skip: 12 },
        machines: machines(250),
        lifecycle: LifecycleConfig::none(),
        ..SimConfig::default()
    };
    let p = SimulatedPlatform::build(config).unwrap();
    let layout = p.layout().clone();

    // A small sample leaves patterns out. Each region's coverage is the share
    // of a larger labelled sample that the catalog still matches.
    let catalog = build_catalog(&p.sample_corpus(window(0, 60), 1500, 30).unwrap(), &layout);
    let labelled = p.sample_corpus(window(0, 60), 30_000, 31).unwrap();
    let coverage: BTreeMap<String, f64> = labelled
        .labels()
        .into_iter()
        .map(|region| (region.to_string(), fetch_overlap(&labelled.with_label(region).unwrap(), &catalog, &layout)))
        .collect();
    assert!(coverage.values().any(|&c| c < 0.98), "sample should miss patterns: {coverage:?}");

    let test = window(60, 30);
    let stream = CandidateStream::new(test, &catalog, &layout).unwrap();
    let fetcher = SimFetcher::new(&p, FetchClock::AfterCreation(86_400));
    let mut sink = MemorySink::default();
    run_fetch(stream, &fetcher, &policy(), &mut sink, &RunOptions::new(layout.clone())).unwrap();
    let mut raw: BTreeMap<String, u64> = BTreeMap::new();
    for r in sink.results.iter().filter(|r| r.status.is_hit()) {
        let country = r.metadata.as_ref().and_then(|m| m.location_created.clone()).unwrap();
        *raw.entry(country).or_default() += 1;
    }
    let mut truth: BTreeMap<String, u64> = BTreeMap::new();
    for post in p.posts_in(test) {
        *truth.entry(post.country).or_default() += 1;
    }
    let region_of: BTreeMap<String, String> = p
        .config()
        .country_mix
        .iter()
        .flat_map(|(region, mix)| mix.keys().map(move |c| (c.clone(), region.clone())))
        .collect();

    let rows = country_corrected_counts(&raw, &region_of, &coverage, &BTreeMap::new(), 0).unwrap();
    let mut checked = 0;
    for row in rows {
        let t = truth[&row.country] as f64;
        if t < 5000.0 {
            continue;
        }
        let err = (row.corrected - t).abs() / t;
        let raw_err = (row.raw as f64 - t).abs() / t;
        assert!(err <= 0.02, "{}: corrected {:.0} vs truth {t} ({:.2}%)", row.country, row.corrected, err * 100.0);
        assert!(err < raw_err || raw_err < 0.005, "{}: correction did not help", row.country);
        checked += 1;
    }
    assert!(checked >= 4, "only {checked} countries large enough");
}

#[test]
fn better_data_quality_narrows_the_interval() {
    let width = |quality: f64, seed: u64| {
        let ci = prevalence_ci(&PrevalenceInput {
            observed_positive_rate: 0.18,
            sample_n: 100_000,
            precision: 0.88,
            recall: 0.81,
            test_set_n: 6110,
            data_quality_index: quality,
            n_bootstrap: 2000,
            seed,
            bias_scale: 0.2,
        })
        .unwrap();
        ci.upper - ci.lower
    };
    let median = |quality: f64| {
        let mut w: Vec<f64> = (0..20).map(|seed| width(quality, seed)).collect();
        w.sort_by(f64::total_cmp);
        (w[9] + w[10]) / 2.0
    };
    let (good, poor) = (median(0.9), median(0.5));
    assert!(good < poor, "width at 0.9 {good} vs 0.5 {poor}");
}
