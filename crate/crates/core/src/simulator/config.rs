use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::generator::TimeRange;
use crate::idcodec::IdLayout;

use super::SimError;

/// 2024-03-01 18:00:00 UTC, the hour containing the reference ID.
pub const DEFAULT_HORIZON_START: u64 = 1_709_316_000;

/// Posts per day the diurnal default profile is scaled to.
pub const DEFAULT_DAILY_TOTAL: f64 = 269.3e6;

/// Relative posting activity per UTC hour: a morning and an evening peak.
pub const DIURNAL_SHAPE: [f64; 24] = [
    0.80, 0.70, 0.62, 0.58, 0.60, 0.68, 0.80, 0.95, 1.08, 1.15, 1.12, 1.05, 1.00, 0.98, 1.00, 1.06, 1.14,
    1.24, 1.32, 1.36, 1.30, 1.18, 1.02, 0.90,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    /// Value of the machine field in IDs minted here.
    pub value: u64,
    pub region: String,
    /// Relative share of posts.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceBehavior {
    /// Chance that a counter step skips ahead instead of advancing by one.
    pub skip_probability: f64,
    /// Largest skip; a skip advances by uniform `2..=max_skip`.
    pub max_skip: u64,
}

impl Default for SequenceBehavior {
    fn default() -> Self {
        Self { skip_probability: 0.1, max_skip: 4 }
    }
}

/// Per-second Poisson rate as a function of time of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArrivalSpec", into = "ArrivalSpec")]
pub struct ArrivalProfile {
    hourly_rate: [f64; 24],
    /// Mean-one multipliers per minute of the hour.
    minute_weights: [f64; 60],
}

/// Accepted forms: `rate = 3300`, `hourly_rate = [..24]`, or
/// `daily_total = 2.693e8` with an optional `hourly_shape`. Any of them may
/// add a 60-entry `minute_weights`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrivalSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hourly_rate: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    daily_total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hourly_shape: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    minute_weights: Option<Vec<f64>>,
}

impl TryFrom<ArrivalSpec> for ArrivalProfile {
    type Error = String;

    fn try_from(spec: ArrivalSpec) -> Result<Self, String> {
        let mut profile = match (spec.rate, spec.hourly_rate, spec.daily_total) {
            (Some(r), None, None) => ArrivalProfile::constant(r),
            (None, Some(h), None) => {
                let h: [f64; 24] = h.try_into().map_err(|v: Vec<f64>| format!("hourly_rate needs 24 values, got {}", v.len()))?;
                ArrivalProfile::hourly(h)
            }
            (None, None, Some(total)) => {
                let shape = match spec.hourly_shape {
                    Some(s) => s.try_into().map_err(|v: Vec<f64>| format!("hourly_shape needs 24 values, got {}", v.len()))?,
                    None => DIURNAL_SHAPE,
                };
                ArrivalProfile::daily(total, shape)?
            }
            (None, None, None) => ArrivalProfile::default(),
            _ => return Err("give only one of rate, hourly_rate, daily_total".into()),
        };
        if let Some(w) = spec.minute_weights {
            let w: [f64; 60] = w.try_into().map_err(|v: Vec<f64>| format!("minute_weights needs 60 values, got {}", v.len()))?;
            profile = profile.with_minute_weights(w)?;
        }
        Ok(profile)
    }
}

impl From<ArrivalProfile> for ArrivalSpec {
    fn from(p: ArrivalProfile) -> Self {
        let flat = p.minute_weights.iter().all(|&w| w == 1.0);
        ArrivalSpec {
            hourly_rate: Some(p.hourly_rate.to_vec()),
            minute_weights: (!flat).then(|| p.minute_weights.to_vec()),
            ..ArrivalSpec::default()
        }
    }
}

impl Default for ArrivalProfile {
    fn default() -> Self {
        Self::daily(DEFAULT_DAILY_TOTAL, DIURNAL_SHAPE).expect("default shape is valid")
    }
}

impl ArrivalProfile {
    pub fn constant(rate: f64) -> Self {
        Self::hourly([rate; 24])
    }

    pub fn hourly(hourly_rate: [f64; 24]) -> Self {
        Self { hourly_rate, minute_weights: [1.0; 60] }
    }

    /// Scale `shape` so a full UTC day has `total` expected posts.
    pub fn daily(total: f64, shape: [f64; 24]) -> Result<Self, String> {
        let sum: f64 = shape.iter().sum();
        if !(sum > 0.0) || shape.iter().any(|&s| s < 0.0) {
            return Err("hourly_shape must be non-negative with a positive sum".into());
        }
        if !(total >= 0.0) {
            return Err("daily_total must be non-negative".into());
        }
        Ok(Self::hourly(shape.map(|s| total * s / sum / 3600.0)))
    }

    /// Reweight minutes within every hour. Weights are rescaled to mean one,
    /// so hourly totals are unchanged.
    pub fn with_minute_weights(mut self, weights: [f64; 60]) -> Result<Self, String> {
        let mean = weights.iter().sum::<f64>() / 60.0;
        if !(mean > 0.0) || weights.iter().any(|&w| w < 0.0) {
            return Err("minute_weights must be non-negative with a positive sum".into());
        }
        self.minute_weights = weights.map(|w| w / mean);
        Ok(self)
    }

    pub fn hourly_rates(&self) -> &[f64; 24] {
        &self.hourly_rate
    }

    pub fn minute_weights(&self) -> &[f64; 60] {
        &self.minute_weights
    }

    /// Expected posts in the given epoch second.
    pub fn rate_at(&self, second: u64) -> f64 {
        let hour = (second / 3600 % 24) as usize;
        let minute = (second / 60 % 60) as usize;
        self.hourly_rate[hour] * self.minute_weights[minute]
    }

    pub fn expected_posts(&self, range: TimeRange) -> f64 {
        (range.start..range.end).map(|s| self.rate_at(s)).sum()
    }
}

/// Share of posts deleted as a function of days since creation: zero at day
/// 0, linear to `rate_early` at `day_early`, linear to `rate_late` at
/// `day_late`, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeletionGrowth {
    pub rate_early: f64,
    pub day_early: f64,
    pub rate_late: f64,
    pub day_late: f64,
}

impl Default for DeletionGrowth {
    fn default() -> Self {
        Self { rate_early: 0.12, day_early: 26.0, rate_late: 0.20, day_late: 215.0 }
    }
}

impl DeletionGrowth {
    /// `rate` of posts deleted immediately at creation, no growth.
    pub fn constant(rate: f64) -> Self {
        Self { rate_early: rate, day_early: 0.0, rate_late: rate, day_late: 0.0 }
    }

    pub fn none() -> Self {
        Self::constant(0.0)
    }

    pub fn share_at(&self, days: f64) -> f64 {
        if days >= self.day_late {
            self.rate_late
        } else if days >= self.day_early {
            let span = self.day_late - self.day_early;
            self.rate_early + (self.rate_late - self.rate_early) * (days - self.day_early) / span
        } else {
            self.rate_early * days.max(0.0) / self.day_early
        }
    }

    /// Days after creation at which a post with uniform draw `u` is deleted;
    /// `None` if it never is.
    pub fn deletion_day(&self, u: f64) -> Option<f64> {
        if u < self.rate_early {
            Some(if self.day_early > 0.0 { self.day_early * u / self.rate_early } else { 0.0 })
        } else if u < self.rate_late {
            let frac = (u - self.rate_early) / (self.rate_late - self.rate_early);
            Some(self.day_early + frac * (self.day_late - self.day_early))
        } else {
            None
        }
    }
}

/// Shares of all posts in each hidden state. Hidden posts are in that state
/// from creation on and never return to visible; the remaining posts are
/// subject to deletion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifecycleConfig {
    pub self_see: f64,
    pub reviewing: f64,
    pub audit_not_pass: f64,
    pub content_classification: f64,
    pub cross_border_violation: f64,
    pub copyright_geo_filter: f64,
    pub deletion: DeletionGrowth,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            self_see: 0.2301,
            reviewing: 0.0741,
            audit_not_pass: 0.0118,
            content_classification: 0.0016,
            cross_border_violation: 0.0001,
            copyright_geo_filter: 0.00002,
            deletion: DeletionGrowth::default(),
        }
    }
}

impl LifecycleConfig {
    pub fn none() -> Self {
        Self {
            self_see: 0.0,
            reviewing: 0.0,
            audit_not_pass: 0.0,
            content_classification: 0.0,
            cross_border_violation: 0.0,
            copyright_geo_filter: 0.0,
            deletion: DeletionGrowth::none(),
        }
    }

    pub(crate) fn hidden(&self) -> [(crate::harness::FetchStatus, f64); 6] {
        use crate::harness::FetchStatus::*;
        [
            (StatusSelfSee, self.self_see),
            (StatusReviewing, self.reviewing),
            (StatusAuditNotPass, self.audit_not_pass),
            (ContentClassification, self.content_classification),
            (CrossBorderViolation, self.cross_border_violation),
            (CopyrightGeoFilter, self.copyright_geo_filter),
        ]
    }

    pub fn hidden_total(&self) -> f64 {
        self.hidden().iter().map(|(_, p)| p).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngagementConfig {
    pub mean_views: f64,
    /// Share of posts with zero views.
    pub zero_view_fraction: f64,
    /// Log-scale spread of the non-zero views.
    pub view_sigma: f64,
    pub mean_duration_seconds: f64,
    pub aigc_fraction: f64,
    pub authors: u64,
    /// View multiplier for scheduled posts.
    pub scheduled_view_multiplier: f64,
}

impl Default for EngagementConfig {
    fn default() -> Self {
        Self {
            mean_views: 2533.0,
            zero_view_fraction: 0.15,
            view_sigma: 2.0,
            mean_duration_seconds: 35.0,
            aigc_fraction: 0.01,
            authors: 5_000_000,
            scheduled_view_multiplier: 3899.0 / 2502.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub layout: IdLayout,
    /// Window in which posts exist.
    pub horizon: TimeRange,
    pub sequence_field: String,
    pub machine_field: String,
    /// Suffix fields with a constant value in every ID.
    pub fixed_fields: BTreeMap<String, u64>,
    pub machines: Vec<MachineSpec>,
    pub sequence: SequenceBehavior,
    pub arrival: ArrivalProfile,
    /// Share of posts whose metadata create time snaps to the next minute.
    pub scheduled_fraction: f64,
    /// Region → country → probability.
    pub country_mix: BTreeMap<String, BTreeMap<String, f64>>,
    pub lifecycle: LifecycleConfig,
    pub engagement: EngagementConfig,
    /// Seconds of generated posts kept in memory for fetch lookups.
    pub cache_seconds: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        let regions = ["us", "eu", "sg"];
        // Region one-hot in the top three machine bits, worker number below.
        let machines = (0..24u64)
            .map(|i| MachineSpec {
                value: (0x20 << (i % 3)) | (i / 3 + 1),
                region: regions[i as usize % 3].to_string(),
                weight: 1.0 / ((i + 1) as f64).powf(0.8),
            })
            .collect();
        let mix = |pairs: &[(&str, f64)]| pairs.iter().map(|(c, p)| (c.to_string(), *p)).collect();
        let country_mix = BTreeMap::from([
            ("us".to_string(), mix(&[("US", 0.75), ("CA", 0.1), ("MX", 0.1), ("BR", 0.05)])),
            ("eu".to_string(), mix(&[("GB", 0.3), ("DE", 0.25), ("FR", 0.2), ("ES", 0.15), ("TR", 0.1)])),
            ("sg".to_string(), mix(&[("ID", 0.35), ("PH", 0.25), ("VN", 0.2), ("TH", 0.2)])),
        ]);
        Self {
            seed: 0,
            layout: IdLayout::default(),
            horizon: TimeRange { start: DEFAULT_HORIZON_START, end: DEFAULT_HORIZON_START + 3600, millisecond_stride: 1 },
            sequence_field: "sequence".into(),
            machine_field: "machine".into(),
            fixed_fields: BTreeMap::from([("entity_type".to_string(), 13)]),
            machines,
            sequence: SequenceBehavior::default(),
            arrival: ArrivalProfile::default(),
            scheduled_fraction: spike_to_scheduled_fraction(0.14),
            country_mix,
            lifecycle: LifecycleConfig::default(),
            engagement: EngagementConfig::default(),
            cache_seconds: 64,
        }
    }
}

/// Scheduled fraction `s` that raises second 0 of each minute to `1 + excess`
/// times the mean of the other seconds: `1 + 60s/(1-s) = 1 + excess`.
pub fn spike_to_scheduled_fraction(excess: f64) -> f64 {
    excess / (60.0 + excess)
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::InvalidConfig(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check every constraint, reporting all violations at once.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        let prob = |p: f64| (0.0..=1.0).contains(&p);

        let seq_slot = self.layout.suffix_field_slot(&self.sequence_field);
        let machine_slot = self.layout.suffix_field_slot(&self.machine_field);
        check(seq_slot.is_some(), format!("sequence_field: `{}` is not a suffix field of the layout", self.sequence_field));
        check(machine_slot.is_some(), format!("machine_field: `{}` is not a suffix field of the layout", self.machine_field));
        check(self.sequence_field != self.machine_field, "sequence_field and machine_field must differ".into());
        for (name, &value) in &self.fixed_fields {
            match self.layout.suffix_field_slot(name) {
                None => check(false, format!("fixed_fields.{name}: not a suffix field of the layout")),
                Some((_, mask)) => check(value <= mask, format!("fixed_fields.{name}: {value} does not fit")),
            }
            check(
                name != &self.sequence_field && name != &self.machine_field,
                format!("fixed_fields.{name}: field is already driven by the simulator"),
            );
        }

        check(!self.machines.is_empty(), "machines: at least one machine is required".into());
        let mut seen = std::collections::BTreeSet::new();
        for (i, m) in self.machines.iter().enumerate() {
            check(m.weight >= 0.0 && m.weight.is_finite(), format!("machines[{i}].weight must be non-negative"));
            check(seen.insert(m.value), format!("machines[{i}].value {} is duplicated", m.value));
            if let Some((_, mask)) = machine_slot {
                check(m.value <= mask, format!("machines[{i}].value {} does not fit the machine field", m.value));
            }
            match self.country_mix.get(&m.region) {
                None => check(false, format!("machines[{i}].region `{}` has no country_mix entry", m.region)),
                Some(mix) => {
                    let total: f64 = mix.values().sum();
                    check(
                        total > 0.0 && mix.values().all(|&p| prob(p)),
                        format!("country_mix.{}: probabilities must be in [0,1] with a positive sum", m.region),
                    );
                }
            }
        }
        check(self.machines.iter().map(|m| m.weight).sum::<f64>() > 0.0, "machines: weights must sum to a positive value".into());
        check(self.machines.len() <= u16::MAX as usize, "machines: too many".into());

        check(prob(self.sequence.skip_probability), "sequence.skip_probability must be in [0,1]".into());
        check(
            self.sequence.skip_probability == 0.0 || self.sequence.max_skip >= 2,
            "sequence.max_skip must be at least 2 when skipping is enabled".into(),
        );
        check(
            self.arrival.hourly_rate.iter().all(|&r| r >= 0.0 && r.is_finite()),
            "arrival: rates must be non-negative".into(),
        );
        check(
            prob(self.scheduled_fraction) && self.scheduled_fraction < 1.0,
            "scheduled_fraction must be in [0,1)".into(),
        );

        let lc = &self.lifecycle;
        for (status, p) in lc.hidden() {
            check(prob(p), format!("lifecycle.{}: must be in [0,1]", status.as_str().trim_start_matches("status_")));
        }
        let d = &lc.deletion;
        check(prob(d.rate_early) && prob(d.rate_late), "lifecycle.deletion: rates must be in [0,1]".into());
        check(d.rate_late >= d.rate_early, "lifecycle.deletion: rate_late must be at least rate_early".into());
        check(
            d.day_early >= 0.0 && d.day_late >= d.day_early,
            "lifecycle.deletion: need 0 <= day_early <= day_late".into(),
        );
        check(
            d.rate_late == d.rate_early || d.day_late > d.day_early,
            "lifecycle.deletion: growth needs day_late > day_early".into(),
        );
        check(
            d.rate_early == 0.0 || d.day_early > 0.0 || d.rate_late == d.rate_early,
            "lifecycle.deletion: immediate deletion cannot also grow".into(),
        );
        check(
            lc.hidden_total() + d.rate_late <= 1.0 + 1e-12,
            "lifecycle: hidden shares plus final deletion share exceed 1".into(),
        );

        let e = &self.engagement;
        check(e.mean_views >= 0.0, "engagement.mean_views must be non-negative".into());
        check(prob(e.zero_view_fraction) && e.zero_view_fraction < 1.0, "engagement.zero_view_fraction must be in [0,1)".into());
        check(e.view_sigma > 0.0, "engagement.view_sigma must be positive".into());
        check(e.mean_duration_seconds > 0.0, "engagement.mean_duration_seconds must be positive".into());
        check(prob(e.aigc_fraction), "engagement.aigc_fraction must be in [0,1]".into());
        check(e.authors > 0, "engagement.authors must be positive".into());
        check(e.scheduled_view_multiplier > 0.0, "engagement.scheduled_view_multiplier must be positive".into());
        check(self.cache_seconds > 0, "cache_seconds must be positive".into());

        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        let back = SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn daily_profile_sums_to_total() {
        let p = ArrivalProfile::daily(86_400.0 * 100.0, DIURNAL_SHAPE).unwrap();
        let day = TimeRange::new(0, 86_400).unwrap();
        assert!((p.expected_posts(day) - 8_640_000.0).abs() < 1e-3);
    }

    #[test]
    fn minute_weights_keep_hour_total() {
        let mut w = [1.0; 60];
        w[0] = 2.0;
        let p = ArrivalProfile::constant(10.0).with_minute_weights(w).unwrap();
        let hour = TimeRange::new(0, 3600).unwrap();
        assert!((p.expected_posts(hour) - 36_000.0).abs() < 1e-6);
        assert!((p.rate_at(0) / p.rate_at(60) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn arrival_forms_parse() {
        let cfg: SimConfig = toml::from_str("[arrival]\nrate = 5.0\n").unwrap();
        assert_eq!(cfg.arrival.rate_at(123), 5.0);
        let cfg: SimConfig = toml::from_str("[arrival]\ndaily_total = 86400.0\n").unwrap();
        assert!((cfg.arrival.expected_posts(TimeRange::new(0, 86_400).unwrap()) - 86_400.0).abs() < 1e-6);
        assert!(toml::from_str::<SimConfig>("[arrival]\nrate = 5.0\ndaily_total = 1.0\n").is_err());
        assert!(toml::from_str::<SimConfig>("[arrival]\nhourly_rate = [1.0]\n").is_err());
    }

    #[test]
    fn deletion_curve_interpolates() {
        let d = DeletionGrowth::default();
        assert_eq!(d.share_at(0.0), 0.0);
        assert!((d.share_at(26.0) - 0.12).abs() < 1e-12);
        assert!((d.share_at(120.5) - 0.16).abs() < 1e-12);
        assert!((d.share_at(400.0) - 0.20).abs() < 1e-12);
        assert!((d.deletion_day(0.06).unwrap() - 13.0).abs() < 1e-9);
        assert!((d.deletion_day(0.16).unwrap() - 120.5).abs() < 1e-9);
        assert_eq!(d.deletion_day(0.2), None);
        assert_eq!(DeletionGrowth::constant(0.3).deletion_day(0.1), Some(0.0));
        assert_eq!(DeletionGrowth::constant(0.3).share_at(0.0), 0.3);
    }

    #[test]
    fn spike_fraction_formula() {
        let s = spike_to_scheduled_fraction(0.14);
        assert!((1.0 + 60.0 * s / (1.0 - s) - 1.14).abs() < 1e-12);
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut cfg = SimConfig::default();
        cfg.machine_field = "nope".into();
        cfg.scheduled_fraction = 1.5;
        cfg.lifecycle.self_see = 0.9;
        let Err(SimError::InvalidConfig(problems)) = cfg.validate() else { panic!() };
        assert_eq!(problems.len(), 3, "{problems:?}");
        assert!(problems[0].starts_with("machine_field"));
    }

    #[test]
    fn machine_values_must_fit() {
        let mut cfg = SimConfig::default();
        cfg.machines[0].value = 256;
        assert!(cfg.validate().is_err());
    }
}
