//! Regulatory-report contract: files digest-anchored study reports
//! covering a day range.

use crate::chaincode::{ContractError, InvocationContext, RuleSet, TxSim};
use serde::{Deserialize, Serialize};

use super::next_seq;

/// On-ledger anchor for an off-chain report artifact. The digest commits
/// to the report bytes; any channel member can later re-derive and check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub report_id: String,
    pub range_lo: u64,
    pub range_hi: u64,
    pub digest_hex: String,
    pub filed_by: String,
    pub day: u64,
}

pub fn invoke(
    _rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    match ctx.function {
        "file_report" => file_report(ctx, sim),
        other => Err(ContractError::UnknownFunction(other.to_string())),
    }
}

pub fn report_key(report_id: &str) -> String {
    format!("report/{report_id}")
}

/// args: [range_lo, range_hi, digest_hex]. Open to every channel member;
/// membership itself is the gate, enforced before invocation.
fn file_report(ctx: &InvocationContext, sim: &mut TxSim) -> Result<Option<String>, ContractError> {
    let range_lo: u64 = ctx
        .arg(0)?
        .parse()
        .map_err(|_| ContractError::BadArgs("range_lo must be a day number".into()))?;
    let range_hi: u64 = ctx
        .arg(1)?
        .parse()
        .map_err(|_| ContractError::BadArgs("range_hi must be a day number".into()))?;
    if range_hi < range_lo {
        return Err(ContractError::BadArgs(format!("empty day range [{range_lo}, {range_hi}]")));
    }
    let digest_hex = ctx.arg(2)?;
    if digest_hex.len() != 64 || hex::decode(digest_hex).is_err() {
        return Err(ContractError::BadArgs("digest must be 32 bytes hex".into()));
    }
    let report_id = next_seq(sim, "seq/report", "R-");
    let record = ReportRecord {
        report_id: report_id.clone(),
        range_lo,
        range_hi,
        digest_hex: digest_hex.to_string(),
        filed_by: ctx.invoker.id.clone(),
        day: ctx.day,
    };
    sim.put_json(&report_key(&report_id), &record);
    Ok(Some(report_id))
}
