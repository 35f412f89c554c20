//! Clinical payload types stored as ledger values (JSON-encoded).
//!
//! These are plain data carriers; the contracts in [`crate::contracts`]
//! decide when writing them is legal. Identifiable data never appears
//! here in full: subjects carry off-chain blob references instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::offchain::BlobRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubjectStatus {
    Screened,
    Enrolled,
    Withdrawn,
}

/// On-ledger subject record. `phi_ref` points at the encrypted
/// identifiable blob; `deid_ref` at the de-identified blob once produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub phi_ref: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deid_ref: Option<BlobRef>,
    pub enrolled_at: u64,
    pub site_id: String,
    pub status: SubjectStatus,
}

/// Consent state for one subject. Effective scopes are granted minus
/// revoked; revocations are never erased, only accumulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub subject_id: String,
    pub granted_scopes: BTreeSet<String>,
    pub granted_at: u64,
    /// scope → day it was revoked
    #[serde(default)]
    pub revoked_scopes: BTreeMap<String, u64>,
}

impl ConsentRecord {
    pub fn effective_scopes(&self) -> BTreeSet<String> {
        self.granted_scopes
            .iter()
            .filter(|s| !self.revoked_scopes.contains_key(*s))
            .cloned()
            .collect()
    }

    pub fn permits(&self, scope: &str) -> bool {
        self.granted_scopes.contains(scope) && !self.revoked_scopes.contains_key(scope)
    }
}

/// One activity performed at a visit: either a coded value (validated
/// against the protocol's code pattern) or an off-chain payload digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityEntry {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coded_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub subject_id: String,
    pub visit_id: String,
    pub performed_day: u64,
    pub activities: Vec<ActivityEntry>,
    pub entered_by: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
    Serious,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Severity::Mild => "Mild",
            Severity::Moderate => "Moderate",
            Severity::Severe => "Severe",
            Severity::Serious => "Serious",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AeStatus {
    Open,
    UnderReview,
    FollowedUp,
    Closed,
}

impl AeStatus {
    /// Transitions move one step along Open → UnderReview → FollowedUp →
    /// Closed; skipping or reversing is illegal.
    pub fn can_transition_to(self, next: AeStatus) -> bool {
        matches!(
            (self, next),
            (AeStatus::Open, AeStatus::UnderReview)
                | (AeStatus::UnderReview, AeStatus::FollowedUp)
                | (AeStatus::FollowedUp, AeStatus::Closed)
        )
    }
}

impl fmt::Display for AeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AeStatus::Open => "Open",
            AeStatus::UnderReview => "UnderReview",
            AeStatus::FollowedUp => "FollowedUp",
            AeStatus::Closed => "Closed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdverseEventReport {
    pub ae_id: String,
    pub subject_id: String,
    pub severity: Severity,
    pub description_digest: String,
    pub reported_by: String,
    pub reported_day: u64,
    pub status: AeStatus,
    pub followup_due_day: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisGrant {
    pub grant_id: String,
    pub analyst_id: String,
    pub scope: String,
    pub subject_ids: Vec<String>,
    pub key_token: String,
    pub issued_day: u64,
    pub redeemed: bool,
    pub revoked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    UnauthorizedRole,
    Ineligible,
    OutOfWindow,
    MissingPrereq,
    MissingConsent,
    StaleVersion,
    OverdueFollowup,
    BadCodeFormat,
    TamperDetected,
}

impl ViolationCode {
    pub const ALL: [ViolationCode; 9] = [
        ViolationCode::UnauthorizedRole,
        ViolationCode::Ineligible,
        ViolationCode::OutOfWindow,
        ViolationCode::MissingPrereq,
        ViolationCode::MissingConsent,
        ViolationCode::StaleVersion,
        ViolationCode::OverdueFollowup,
        ViolationCode::BadCodeFormat,
        ViolationCode::TamperDetected,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::UnauthorizedRole => "UNAUTHORIZED_ROLE",
            ViolationCode::Ineligible => "INELIGIBLE",
            ViolationCode::OutOfWindow => "OUT_OF_WINDOW",
            ViolationCode::MissingPrereq => "MISSING_PREREQ",
            ViolationCode::MissingConsent => "MISSING_CONSENT",
            ViolationCode::StaleVersion => "STALE_VERSION",
            ViolationCode::OverdueFollowup => "OVERDUE_FOLLOWUP",
            ViolationCode::BadCodeFormat => "BAD_CODE_FORMAT",
            ViolationCode::TamperDetected => "TAMPER_DETECTED",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Audit-trail record of one detected protocol violation. `tx_id` names
/// the transaction that carries the entry; it is empty when the entry is
/// embedded in the transaction being written (the id is not yet known at
/// simulation time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEntry {
    pub code: ViolationCode,
    pub channel_id: String,
    pub tx_id: String,
    pub detail: String,
    pub day: u64,
}
