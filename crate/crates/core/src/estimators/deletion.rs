use std::collections::BTreeMap;

use serde::Serialize;

use crate::harness::{FetchResult, FetchStatus};
use crate::idcodec::IdLayout;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeletionPoint {
    /// Whole days between ID create time and fetch.
    pub delay_days: u64,
    pub ever_existing: u64,
    pub deleted: u64,
    pub deleted_share: f64,
}

/// Share of ever-existing posts reporting `status_deleted`, grouped by how
/// long after creation they were fetched.
pub fn deletion_rate_curve<'a>(results: impl IntoIterator<Item = &'a FetchResult>, layout: &IdLayout) -> Vec<DeletionPoint> {
    let mut groups: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for r in results.into_iter().filter(|r| r.status.is_hit()) {
        let delay = r.fetched_at.saturating_sub(layout.timestamp_of(r.id)) / 86_400;
        let g = groups.entry(delay).or_default();
        g.0 += 1;
        g.1 += u64::from(r.status == FetchStatus::StatusDeleted);
    }
    groups
        .into_iter()
        .map(|(delay_days, (ever_existing, deleted))| DeletionPoint {
            delay_days,
            ever_existing,
            deleted,
            deleted_share: deleted as f64 / ever_existing as f64,
        })
        .collect()
}
