use std::collections::BTreeMap;

use serde::Serialize;

use crate::idcodec::CreateTime;

use super::EstimatorError;

/// Countries with fewer raw posts than this are flagged excluded.
pub const DEFAULT_MIN_POSTS: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountryEstimate {
    pub country: String,
    pub region: String,
    pub raw: u64,
    pub coverage: f64,
    pub corrected: f64,
    /// Corrected posts per person, when a population was given.
    pub per_capita: Option<f64>,
    pub excluded: bool,
}

/// Divide each country's raw count by the coverage of the region its posts
/// were minted in.
pub fn country_corrected_counts(
    raw: &BTreeMap<String, u64>,
    region_of: &BTreeMap<String, String>,
    coverage: &BTreeMap<String, f64>,
    populations: &BTreeMap<String, f64>,
    min_posts: u64,
) -> Result<Vec<CountryEstimate>, EstimatorError> {
    raw.iter()
        .map(|(country, &n)| {
            let region = region_of.get(country).ok_or_else(|| EstimatorError::MissingRegion(country.clone()))?;
            let cov = *coverage.get(region).ok_or_else(|| EstimatorError::MissingCoverage(region.clone()))?;
            if !(cov > 0.0 && cov <= 1.0) {
                return Err(EstimatorError::InvalidCoverage { region: region.clone(), value: cov });
            }
            let corrected = n as f64 / cov;
            let per_capita = populations.get(country).filter(|&&p| p > 0.0).map(|p| corrected / p);
            Ok(CountryEstimate {
                country: country.clone(),
                region: region.clone(),
                raw: n,
                coverage: cov,
                corrected,
                per_capita,
                excluded: n < min_posts,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LocalTimeHistogram {
    pub bins: [u64; 24],
    /// Posts with no country or a country missing from the table.
    pub unknown: u64,
}

/// Hour of local day for each post: `floor((utc_hour + offset) mod 24)`
/// where `utc_hour` is fractional.
pub fn local_time_histogram<'a>(
    posts: impl IntoIterator<Item = (Option<&'a str>, CreateTime)>,
    offsets: &BTreeMap<String, f64>,
) -> LocalTimeHistogram {
    let mut hist = LocalTimeHistogram { bins: [0; 24], unknown: 0 };
    for (country, t) in posts {
        let Some(offset) = country.and_then(|c| offsets.get(c)) else {
            hist.unknown += 1;
            continue;
        };
        let utc_hour = (t.seconds % 86_400) as f64 / 3600.0 + t.millisecond as f64 / 3.6e6;
        let local = (utc_hour + offset).rem_euclid(24.0);
        hist.bins[(local.floor() as usize).min(23)] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map<V: Clone>(pairs: &[(&str, V)]) -> BTreeMap<String, V> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn full_coverage_is_identity() {
        let raw = map(&[("US", 500u64), ("DE", 20)]);
        let regions = map(&[("US", "us".to_string()), ("DE", "eu".to_string())]);
        let cov = map(&[("us", 1.0), ("eu", 1.0)]);
        let out = country_corrected_counts(&raw, &regions, &cov, &BTreeMap::new(), DEFAULT_MIN_POSTS).unwrap();
        assert!(out.iter().all(|c| c.corrected == c.raw as f64 && c.per_capita.is_none()));
        assert!(out.iter().find(|c| c.country == "DE").unwrap().excluded);
        assert!(!out.iter().find(|c| c.country == "US").unwrap().excluded);
    }

    #[test]
    fn coverage_division_and_per_capita() {
        let raw = map(&[("US", 990u64)]);
        let regions = map(&[("US", "us".to_string())]);
        let out = country_corrected_counts(&raw, &regions, &map(&[("us", 0.99)]), &map(&[("US", 1e4)]), 50).unwrap();
        assert!((out[0].corrected - 1000.0).abs() < 1e-9);
        assert!((out[0].per_capita.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn missing_region_or_coverage() {
        let raw = map(&[("XX", 1u64)]);
        assert!(matches!(
            country_corrected_counts(&raw, &BTreeMap::new(), &BTreeMap::new(), &BTreeMap::new(), 50),
            Err(EstimatorError::MissingRegion(c)) if c == "XX"
        ));
        let regions = map(&[("XX", "r".to_string())]);
        assert!(matches!(
            country_corrected_counts(&raw, &regions, &BTreeMap::new(), &BTreeMap::new(), 50),
            Err(EstimatorError::MissingCoverage(_))
        ));
        assert!(matches!(
            country_corrected_counts(&raw, &regions, &map(&[("r", 0.0)]), &BTreeMap::new(), 50),
            Err(EstimatorError::InvalidCoverage { .. })
        ));
    }

    fn at(seconds: u64) -> CreateTime {
        CreateTime { seconds, millisecond: 0 }
    }

    #[test]
    fn zero_offset_matches_utc() {
        let offsets = map(&[("GB", 0.0)]);
        let posts = (0..48u64).map(|h| (Some("GB"), at(h * 3600 + 1800)));
        let hist = local_time_histogram(posts, &offsets);
        assert_eq!(hist.bins, [2; 24]);
        assert_eq!(hist.unknown, 0);
    }

    #[test]
    fn half_hour_offset_splits_by_floor() {
        let offsets = map(&[("IN", 5.5)]);
        // 00:20 UTC -> 05:50 local, 00:40 UTC -> 06:10 local, 23:00 UTC -> 04:30 local.
        let posts = [(Some("IN"), at(1200)), (Some("IN"), at(2400)), (Some("IN"), at(23 * 3600)), (None, at(0)), (Some("ZZ"), at(0))];
        let hist = local_time_histogram(posts, &offsets);
        let mut expected = [0u64; 24];
        expected[5] = 1;
        expected[6] = 1;
        expected[4] = 1;
        assert_eq!(hist.bins, expected);
        assert_eq!(hist.unknown, 2);
    }

    #[test]
    fn negative_offset_wraps() {
        let offsets = map(&[("US", -5.0)]);
        let hist = local_time_histogram([(Some("US"), at(3600 * 2))], &offsets);
        assert_eq!(hist.bins[21], 1);
    }
}
