//! Trial monitoring contract: visit-window enforcement, activity
//! prerequisites, value-code format checks, and adverse-event tracking.

use crate::chaincode::{ContractError, InvocationContext, RuleSet, RuleViolation, TxSim};
use crate::identity::Role;
use crate::records::{
    AdverseEventReport, AeStatus, SubjectRecord, SubjectStatus, ViolationCode, VisitRecord,
};
use serde::{Deserialize, Serialize};

use super::{next_seq, parse_ae_status, parse_severity};

/// Ledger notification for a serious adverse event; readable by every
/// monitoring member, addressed to the oversight bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriousAeNotice {
    pub ae_id: String,
    pub subject_id: String,
    pub day: u64,
    pub audience: Vec<String>,
}

pub fn invoke(
    rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    match ctx.function {
        "sync_subject" => sync_subject(ctx, sim),
        "record_visit" => record_visit(rules, ctx, sim),
        "report_ae" => report_ae(rules, ctx, sim),
        "update_ae" => update_ae(ctx, sim),
        other => Err(ContractError::UnknownFunction(other.to_string())),
    }
}

pub fn subject_key(subject_id: &str) -> String {
    format!("subject/{subject_id}")
}

pub fn visit_key(subject_id: &str, visit_id: &str) -> String {
    format!("visit/{subject_id}/{visit_id}")
}

pub fn ae_key(ae_id: &str) -> String {
    format!("ae/{ae_id}")
}

/// args: [subject_record_json] — client-layer projection of the
/// enrollment-channel subject record (refs stripped by the proposer).
fn sync_subject(ctx: &InvocationContext, sim: &mut TxSim) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::PrincipalInvestigator, Role::CoordinatingCenter])?;
    let record: SubjectRecord = serde_json::from_str(ctx.arg(0)?)?;
    sim.put_json(&subject_key(&record.subject_id), &record);
    Ok(None)
}

/// args: [visit_record_json]
fn record_visit(
    rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::PrincipalInvestigator, Role::CoordinatingCenter])?;
    let mut record: VisitRecord = serde_json::from_str(ctx.arg(0)?)?;
    record.entered_by = ctx.invoker.id.clone();

    let subject: SubjectRecord = sim
        .get_json(&subject_key(&record.subject_id))?
        .ok_or_else(|| ContractError::UnknownSubject(record.subject_id.clone()))?;
    if subject.status != SubjectStatus::Enrolled {
        return Err(ContractError::NotEnrolled(record.subject_id.clone()));
    }
    let visit = rules
        .protocol
        .schedule
        .visit(&record.visit_id)
        .ok_or_else(|| ContractError::UnknownVisit(record.visit_id.clone()))?;

    if !visit.in_window(subject.enrolled_at, record.performed_day) {
        let (lo, hi) = visit.window(subject.enrolled_at);
        return Err(ContractError::Violation(RuleViolation::new(
            ViolationCode::OutOfWindow,
            format!("day {} outside [{lo}, {hi}] for {}", record.performed_day, record.visit_id),
        )));
    }

    // prerequisites may be satisfied by prior committed visits or by
    // activities earlier in this record
    let mut recorded: Vec<String> = Vec::new();
    for (_, bytes) in sim.scan(&format!("visit/{}/", record.subject_id)) {
        let prior: VisitRecord = serde_json::from_slice(&bytes)?;
        recorded.extend(prior.activities.iter().map(|a| a.code.clone()));
    }
    for activity in &record.activities {
        if let Some(required) = visit.prerequisites.get(&activity.code) {
            for prereq in required {
                if !recorded.contains(prereq) {
                    return Err(ContractError::Violation(RuleViolation::new(
                        ViolationCode::MissingPrereq,
                        format!("{} requires {prereq}", activity.code),
                    )));
                }
            }
        }
        if let Some(value) = &activity.coded_value {
            if !rules.protocol.code_ok(value) {
                return Err(ContractError::Violation(RuleViolation::new(
                    ViolationCode::BadCodeFormat,
                    format!("{}:{value}", activity.code),
                )));
            }
        }
        recorded.push(activity.code.clone());
    }

    sim.put_json(&visit_key(&record.subject_id, &record.visit_id), &record);
    Ok(None)
}

/// args: [subject_id, severity, description_digest_hex, reporter_id].
/// `reporter_id` is the clinical reporter of record; subjects reach this
/// function through a coordinating-center mirror of their enrollment-
/// channel intake, since they hold no monitoring membership.
fn report_ae(
    rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::PrincipalInvestigator, Role::CoordinatingCenter])?;
    let subject_id = ctx.arg(0)?;
    let severity = parse_severity(ctx.arg(1)?)?;
    let description_digest = ctx.arg(2)?;
    let reporter_id = ctx.arg(3)?;
    if sim.get(&subject_key(subject_id)).is_none() {
        return Err(ContractError::UnknownSubject(subject_id.to_string()));
    }

    let ae_id = next_seq(sim, "seq/ae", "AE-");
    let report = AdverseEventReport {
        ae_id: ae_id.clone(),
        subject_id: subject_id.to_string(),
        severity,
        description_digest: description_digest.to_string(),
        reported_by: reporter_id.to_string(),
        reported_day: ctx.day,
        status: AeStatus::Open,
        followup_due_day: ctx.day + rules.protocol.ae_followup_days,
    };
    sim.put_json(&ae_key(&ae_id), &report);
    if severity == crate::records::Severity::Serious {
        let notice = SeriousAeNotice {
            ae_id: ae_id.clone(),
            subject_id: subject_id.to_string(),
            day: ctx.day,
            audience: vec!["DSMB".to_string(), "RegulatoryAgency".to_string()],
        };
        sim.put_json(&format!("notify/{ae_id}"), &notice);
    }
    Ok(Some(ae_id))
}

/// args: [ae_id, new_status]. Transitions move one step forward only; a
/// follow-up completed after its due day is applied but flagged.
fn update_ae(ctx: &InvocationContext, sim: &mut TxSim) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::PrincipalInvestigator, Role::Dsmb])?;
    let ae_id = ctx.arg(0)?;
    let new_status = parse_ae_status(ctx.arg(1)?)?;
    let mut report: AdverseEventReport = sim
        .get_json(&ae_key(ae_id))?
        .ok_or_else(|| ContractError::UnknownAe(ae_id.to_string()))?;
    if !report.status.can_transition_to(new_status) {
        return Err(ContractError::IllegalTransition {
            from: report.status.to_string(),
            to: new_status.to_string(),
        });
    }
    if new_status == AeStatus::FollowedUp && ctx.day > report.followup_due_day {
        sim.log_violation(
            ctx,
            ViolationCode::OverdueFollowup,
            &format!("{ae_id} followed up day {}, due day {}", ctx.day, report.followup_due_day),
        );
    }
    report.status = new_status;
    sim.put_json(&ae_key(ae_id), &report);
    Ok(None)
}
