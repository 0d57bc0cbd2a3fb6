use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::generator::TimeRange;
use crate::idcodec::IdLayout;

use super::EstimatorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketWidth {
    Second,
    Minute,
    Hour,
}

impl BucketWidth {
    pub fn seconds(self) -> u64 {
        match self {
            BucketWidth::Second => 1,
            BucketWidth::Minute => 60,
            BucketWidth::Hour => 3600,
        }
    }
}

impl fmt::Display for BucketWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BucketWidth::Second => "second",
            BucketWidth::Minute => "minute",
            BucketWidth::Hour => "hour",
        })
    }
}

impl FromStr for BucketWidth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "second" => Ok(BucketWidth::Second),
            "minute" => Ok(BucketWidth::Minute),
            "hour" => Ok(BucketWidth::Hour),
            other => Err(format!("unknown bucket width `{other}`")),
        }
    }
}

/// Post counts by ID-derived create time over contiguous buckets starting at
/// `start`. The last bucket may be shorter than `width` if the range is not
/// a whole number of buckets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeSeries {
    pub width: BucketWidth,
    pub start: u64,
    pub counts: Vec<u64>,
}

impl VolumeSeries {
    pub fn buckets(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let w = self.width.seconds();
        self.counts.iter().enumerate().map(move |(i, &c)| (self.start + i as u64 * w, c))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.counts.is_empty() {
            0.0
        } else {
            self.total() as f64 / self.counts.len() as f64
        }
    }

    /// Merge into wider buckets aligned to the same start.
    pub fn coarsen(&self, width: BucketWidth) -> Result<VolumeSeries, EstimatorError> {
        let (from, to) = (self.width.seconds(), width.seconds());
        if to < from || to % from != 0 {
            return Err(EstimatorError::WidthMismatch { from: self.width, to: width });
        }
        let per = (to / from) as usize;
        Ok(VolumeSeries { width, start: self.start, counts: self.counts.chunks(per).map(|c| c.iter().sum()).collect() })
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["bucket_start", "count"])?;
        for (start, count) in self.buckets() {
            wtr.write_record([start.to_string(), count.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Count IDs per bucket of `range`. IDs outside the range are ignored.
pub fn bucket_volume(
    ids: impl IntoIterator<Item = u64>,
    layout: &IdLayout,
    width: BucketWidth,
    range: TimeRange,
) -> VolumeSeries {
    let w = width.seconds();
    let mut counts = vec![0u64; range.seconds().div_ceil(w) as usize];
    for id in ids {
        let t = layout.timestamp_of(id);
        if range.contains_second(t) {
            counts[((t - range.start) / w) as usize] += 1;
        }
    }
    VolumeSeries { width, start: range.start, counts }
}

/// Activity of one minute relative to the mean of the other 59 of the hour.
pub fn minute_correction_factor(hour: &VolumeSeries, minute_index: usize) -> Result<f64, EstimatorError> {
    if hour.width != BucketWidth::Minute || hour.counts.len() != 60 || minute_index >= 60 {
        return Err(EstimatorError::IncompleteHour { buckets: hour.counts.len(), width: hour.width });
    }
    let others = (hour.total() - hour.counts[minute_index]) as f64 / 59.0;
    if others == 0.0 {
        return Err(EstimatorError::ZeroBaseline);
    }
    Ok(hour.counts[minute_index] as f64 / others)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DailyEstimate {
    pub hourly: Vec<f64>,
    pub total: f64,
}

/// Scale one sampled minute per hour up to the hour: `60 * sample / factor`.
pub fn extrapolate_daily_volume(samples: &[u64], factor: f64) -> Result<DailyEstimate, EstimatorError> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(EstimatorError::BadFactor(factor));
    }
    if samples.len() != 24 {
        return Err(EstimatorError::BadSampleCount(samples.len()));
    }
    let hourly: Vec<f64> = samples.iter().map(|&s| 60.0 * s as f64 / factor).collect();
    let total = hourly.iter().sum();
    Ok(DailyEstimate { hourly, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minutes(counts: Vec<u64>) -> VolumeSeries {
        VolumeSeries { width: BucketWidth::Minute, start: 0, counts }
    }

    #[test]
    fn buckets_by_id_time() {
        let layout = IdLayout::default();
        let range = TimeRange::new(1000, 1125).unwrap();
        let ids = [1000, 1000, 1059, 1060, 1124, 999, 1125].map(|s| layout.compose(s, 3, 1).unwrap());
        let s = bucket_volume(ids, &layout, BucketWidth::Minute, range);
        assert_eq!(s.counts, vec![3, 1, 1]);
        assert_eq!(s.buckets().collect::<Vec<_>>(), vec![(1000, 3), (1060, 1), (1120, 1)]);
        let per_second = bucket_volume(ids, &layout, BucketWidth::Second, range);
        assert_eq!(per_second.coarsen(BucketWidth::Minute).unwrap(), s);
        assert!(per_second.coarsen(BucketWidth::Second).is_ok());
        assert!(s.coarsen(BucketWidth::Second).is_err());
    }

    #[test]
    fn empty_input_gives_zero_series() {
        let s = bucket_volume([], &IdLayout::default(), BucketWidth::Second, TimeRange::new(0, 10).unwrap());
        assert_eq!(s.counts, vec![0; 10]);
    }

    #[test]
    fn correction_factor() {
        assert_eq!(minute_correction_factor(&minutes(vec![100; 60]), 42).unwrap(), 1.0);
        let mut c = vec![1000; 60];
        c[42] = 973;
        assert!((minute_correction_factor(&minutes(c), 42).unwrap() - 0.973).abs() < 1e-12);
        assert!(matches!(minute_correction_factor(&minutes(vec![1; 59]), 0), Err(EstimatorError::IncompleteHour { .. })));
        assert!(matches!(minute_correction_factor(&minutes(vec![0; 60]), 0), Err(EstimatorError::ZeroBaseline)));
    }

    #[test]
    fn daily_extrapolation() {
        assert_eq!(extrapolate_daily_volume(&[0; 24], 0.9).unwrap().total, 0.0);
        let est = extrapolate_daily_volume(&[186_895; 24], 0.973).unwrap();
        // 60 * 186895 / 0.973 = 11,524,871.5...
        assert!((est.hourly[0] - 11_524_871.53).abs() < 0.01, "{}", est.hourly[0]);
        assert!((est.total - 276_596_916.75).abs() < 1.0, "{}", est.total);
        assert!(matches!(extrapolate_daily_volume(&[1; 24], 0.0), Err(EstimatorError::BadFactor(_))));
        assert!(matches!(extrapolate_daily_volume(&[1; 23], 1.0), Err(EstimatorError::BadSampleCount(23))));
    }
}
