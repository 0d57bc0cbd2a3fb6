use std::fmt;

use serde::{Deserialize, Serialize};

/// Raw string returned by the platform for IDs that never existed.
pub const ITEM_NOT_EXIST_RAW: &str = "item doesn't exist";

/// Canonical outcome of probing one candidate ID.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    ItemNotExist,
    StatusDeleted,
    StatusSelfSee,
    StatusReviewing,
    StatusAuditNotPass,
    ContentClassification,
    CrossBorderViolation,
    CopyrightGeoFilter,
    Other(String),
}

/// Hidden-post statuses in collapse priority order: when a post reports
/// several, the earliest one here wins.
pub const ERROR_PRIORITY: [FetchStatus; 7] = [
    FetchStatus::StatusDeleted,
    FetchStatus::StatusSelfSee,
    FetchStatus::StatusAuditNotPass,
    FetchStatus::StatusReviewing,
    FetchStatus::ContentClassification,
    FetchStatus::CrossBorderViolation,
    FetchStatus::CopyrightGeoFilter,
];

impl FetchStatus {
    pub fn as_str(&self) -> &str {
        match self {
            FetchStatus::Ok => "ok",
            FetchStatus::ItemNotExist => "item_not_exist",
            FetchStatus::StatusDeleted => "status_deleted",
            FetchStatus::StatusSelfSee => "status_self_see",
            FetchStatus::StatusReviewing => "status_reviewing",
            FetchStatus::StatusAuditNotPass => "status_audit_not_pass",
            FetchStatus::ContentClassification => "content_classification",
            FetchStatus::CrossBorderViolation => "cross_border_violation",
            FetchStatus::CopyrightGeoFilter => "copyright_geo_filter",
            FetchStatus::Other(raw) => raw,
        }
    }

    /// The post exists or existed at some point: visible or any taxonomized
    /// hidden status.
    pub fn is_hit(&self) -> bool {
        !matches!(self, FetchStatus::ItemNotExist | FetchStatus::Other(_))
    }

    pub fn is_transport_failure(&self) -> bool {
        matches!(self, FetchStatus::Other(raw) if raw == TRANSPORT_STATUS)
    }
}

impl fmt::Display for FetchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FetchStatus::Other(raw) => write!(f, "other({raw})"),
            s => f.write_str(s.as_str()),
        }
    }
}

/// Raw status recorded when every retry hit a transport error.
pub const TRANSPORT_STATUS: &str = "transport";

/// Exact-match mapping of one raw status string onto the taxonomy.
pub fn classify_error(raw: &str) -> FetchStatus {
    match raw {
        "status_deleted" => FetchStatus::StatusDeleted,
        "status_self_see" => FetchStatus::StatusSelfSee,
        "status_reviewing" => FetchStatus::StatusReviewing,
        "status_audit_not_pass" => FetchStatus::StatusAuditNotPass,
        "content_classification" => FetchStatus::ContentClassification,
        "cross_border_violation" => FetchStatus::CrossBorderViolation,
        "copyright_geo_filter" => FetchStatus::CopyrightGeoFilter,
        ITEM_NOT_EXIST_RAW | "item_not_exist" => FetchStatus::ItemNotExist,
        other => FetchStatus::Other(other.to_string()),
    }
}

/// Collapse several raw statuses reported for one post to a single
/// canonical status.
pub fn classify_statuses<S: AsRef<str>>(raws: &[S]) -> FetchStatus {
    let classified: Vec<FetchStatus> = raws.iter().map(|r| classify_error(r.as_ref())).collect();
    if let Some(s) = ERROR_PRIORITY.iter().find(|p| classified.contains(p)) {
        return s.clone();
    }
    if classified.contains(&FetchStatus::ItemNotExist) {
        return FetchStatus::ItemNotExist;
    }
    classified
        .into_iter()
        .next()
        .unwrap_or_else(|| FetchStatus::Other(String::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_statuses() {
        assert_eq!(classify_error("status_self_see"), FetchStatus::StatusSelfSee);
        assert_eq!(classify_error("copyright_geo_filter"), FetchStatus::CopyrightGeoFilter);
        assert_eq!(classify_error(""), FetchStatus::Other(String::new()));
        assert_eq!(classify_error("item doesn't exist"), FetchStatus::ItemNotExist);
        assert_eq!(classify_error("Status_Deleted"), FetchStatus::Other("Status_Deleted".into()));
    }

    #[test]
    fn multiple_statuses_collapse_by_priority() {
        assert_eq!(
            classify_statuses(&["status_reviewing", "status_audit_not_pass"]),
            FetchStatus::StatusAuditNotPass
        );
        assert_eq!(classify_statuses(&["weird", "status_deleted"]), FetchStatus::StatusDeleted);
        assert_eq!(classify_statuses(&["weird", ITEM_NOT_EXIST_RAW]), FetchStatus::ItemNotExist);
        assert_eq!(classify_statuses(&["weird", "odd"]), FetchStatus::Other("weird".into()));
        assert_eq!(classify_statuses::<&str>(&[]), FetchStatus::Other(String::new()));
    }

    #[test]
    fn serde_form() {
        assert_eq!(serde_json::to_string(&FetchStatus::StatusSelfSee).unwrap(), "\"status_self_see\"");
        assert_eq!(
            serde_json::to_string(&FetchStatus::Other("transport".into())).unwrap(),
            "{\"other\":\"transport\"}"
        );
    }

    #[test]
    fn hits() {
        assert!(FetchStatus::Ok.is_hit());
        assert!(FetchStatus::StatusDeleted.is_hit());
        assert!(!FetchStatus::ItemNotExist.is_hit());
        assert!(!FetchStatus::Other("x".into()).is_hit());
    }

    proptest! {
        #[test]
        fn classification_is_idempotent(raw in "\\PC{0,24}") {
            let once = classify_error(&raw);
            prop_assert_eq!(classify_error(once.as_str()), once.clone());
        }

        #[test]
        fn taxonomy_names_round_trip(i in 0usize..ERROR_PRIORITY.len()) {
            let s = &ERROR_PRIORITY[i];
            prop_assert_eq!(&classify_error(s.as_str()), s);
        }
    }
}
