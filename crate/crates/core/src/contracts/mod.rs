//! The channel-specific contract rule evaluators.
//!
//! Each contract owns a key space on its channel:
//!
//! | channel     | keys |
//! |-------------|------|
//! | enrollment  | `seq/subject`, `seq/ae_intake`, `subject/<id>`, `consent/<id>`, `attrs/<id>`, `subject_ident/<identity>`, `ae_intake/<id>`, `blobkey/<digest>` |
//! | monitoring  | `seq/ae`, `subject/<id>` (projection), `visit/<subject>/<visit>`, `ae/<id>`, `notify/<ae_id>` |
//! | analysis    | `seq/grant`, `consent/<id>` (projection), `deid/<id>`, `grant/<id>` |
//! | report      | `seq/report`, `report/<id>` |
//! | any         | `violation/<digest>/<day>` |
//!
//! Channels are isolated, so the projections (`subject/`, `consent/`,
//! `deid/`) are synced by client-layer transactions proposed by members
//! of both channels; contracts never reach across.

use crate::chaincode::{ContractError, ContractKind, InvocationContext, RuleSet, TxSim};
use crate::records::{AeStatus, Severity};

pub mod analysis;
pub mod bench;
pub mod enrollment;
pub mod monitoring;
pub mod report;

/// Route an invocation to its contract family.
pub fn dispatch(
    rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    match rules.kind {
        ContractKind::Enrollment => enrollment::invoke(rules, ctx, sim),
        ContractKind::Monitoring => monitoring::invoke(rules, ctx, sim),
        ContractKind::Analysis => analysis::invoke(rules, ctx, sim),
        ContractKind::Report => report::invoke(rules, ctx, sim),
        ContractKind::Bench => bench::invoke(rules, ctx, sim),
    }
}

pub(crate) fn parse_severity(s: &str) -> Result<Severity, ContractError> {
    Ok(match s {
        "Mild" => Severity::Mild,
        "Moderate" => Severity::Moderate,
        "Severe" => Severity::Severe,
        "Serious" => Severity::Serious,
        other => return Err(ContractError::BadArgs(format!("unknown severity '{other}'"))),
    })
}

pub(crate) fn parse_ae_status(s: &str) -> Result<AeStatus, ContractError> {
    Ok(match s {
        "Open" => AeStatus::Open,
        "UnderReview" => AeStatus::UnderReview,
        "FollowedUp" => AeStatus::FollowedUp,
        "Closed" => AeStatus::Closed,
        other => return Err(ContractError::BadArgs(format!("unknown status '{other}'"))),
    })
}

/// Allocate the next id from an ASCII counter key, e.g. `S-0001`.
/// The counter read lands in the read set, which serializes allocations.
pub(crate) fn next_seq(sim: &mut TxSim, counter_key: &str, prefix: &str) -> String {
    let n = sim
        .get(counter_key)
        .and_then(|b| String::from_utf8(b).ok())
        .and_then(|s| s.parse::<u64>().ok())
        .unwrap_or(0)
        + 1;
    sim.put(counter_key, n.to_string().into_bytes());
    format!("{prefix}{n:04}")
}
