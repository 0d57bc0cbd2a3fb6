//! Census statistics over fetched results and ground truth.

mod deletion;
mod geography;
mod prevalence;
mod timing;
mod volume;

use thiserror::Error;

pub use deletion::{deletion_rate_curve, DeletionPoint};
pub use geography::{country_corrected_counts, local_time_histogram, CountryEstimate, LocalTimeHistogram, DEFAULT_MIN_POSTS};
pub use prevalence::{percentile, prevalence_ci, PrevalenceCI, PrevalenceInput, RATE_FLOOR};
pub use timing::{
    mann_whitney_u, second_of_minute_histogram, second_zero_ratio, zeroth_second_analysis, MannWhitney, ZerothSecond,
    MIN_ZEROTH_POSTS,
};
pub use volume::{bucket_volume, extrapolate_daily_volume, minute_correction_factor, BucketWidth, DailyEstimate, VolumeSeries};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need 60 minute buckets, got {buckets} {width} buckets")]
    IncompleteHour { buckets: usize, width: BucketWidth },
    #[error("the other minutes of the hour have no posts")]
    ZeroBaseline,
    #[error("correction factor must be positive and finite, got {0}")]
    BadFactor(f64),
    #[error("need one sample per hour (24), got {0}")]
    BadSampleCount(usize),
    #[error("cannot merge {from} buckets into {to} buckets")]
    WidthMismatch { from: BucketWidth, to: BucketWidth },
    #[error("need at least {needed} posts at second 0, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("country `{0}` has no region")]
    MissingRegion(String),
    #[error("region `{0}` has no coverage estimate")]
    MissingCoverage(String),
    #[error("coverage for region `{region}` must be in (0, 1], got {value}")]
    InvalidCoverage { region: String, value: f64 },
    #[error("invalid prevalence input: {0}")]
    InvalidRates(String),
}
