//! Subject enrollment contract: eligibility screening, consent capture,
//! identifier/clinical data separation, and subject-initiated intake.
//!
//! Identifiable attributes never appear in transaction args or state;
//! they travel inside an encrypted off-chain blob prepared by the
//! proposing site, referenced by digest, with its data key wrapped under
//! the channel key.

use std::collections::BTreeMap;

use crate::chaincode::{ContractError, InvocationContext, RuleSet, RuleViolation, TxSim};
use crate::codec::sha256;
use crate::identity::Role;
use crate::offchain::{BlobKey, BlobRef};
use crate::protocol::{AttrValue, Candidate};
use crate::records::{ConsentRecord, SubjectRecord, SubjectStatus, ViolationCode};
use serde::{Deserialize, Serialize};

use super::{next_seq, parse_severity};

/// Adverse event filed by a subject on the enrollment channel; the
/// coordinating center mirrors it onto the monitoring channel, where
/// subjects hold no membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntakeRecord {
    pub intake_id: String,
    pub subject_id: String,
    pub severity: crate::records::Severity,
    pub description_digest: String,
    pub day: u64,
}

pub fn invoke(
    rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    match ctx.function {
        "enroll_subject" => enroll_subject(rules, ctx, sim),
        "deidentify_subject" => deidentify_subject(rules, ctx, sim),
        "revoke_consent" => revoke_consent(ctx, sim),
        "report_ae_intake" => report_ae_intake(ctx, sim),
        other => Err(ContractError::UnknownFunction(other.to_string())),
    }
}

pub fn subject_key(subject_id: &str) -> String {
    format!("subject/{subject_id}")
}

pub fn consent_key(subject_id: &str) -> String {
    format!("consent/{subject_id}")
}

pub fn blobkey_key(digest_hex: &str) -> String {
    format!("blobkey/{digest_hex}")
}

/// args: [clinical_attrs_json, scopes_csv, site_id, subject_identity_id,
///        phi_digest_hex, wrapped_phi_key_hex]
fn enroll_subject(
    rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::PrincipalInvestigator])?;
    let candidate: Candidate = serde_json::from_str(ctx.arg(0)?)?;
    let scopes: Vec<String> = ctx
        .arg(1)?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if scopes.is_empty() {
        return Err(ContractError::BadArgs("at least one consent scope required".into()));
    }
    for s in &scopes {
        if !rules.protocol.consent_scopes.contains(s) {
            return Err(ContractError::BadArgs(format!("unknown consent scope '{s}'")));
        }
    }
    let site_id = ctx.arg(2)?;
    let subject_ident = ctx.arg(3)?;
    let phi_digest = ctx.arg(4)?;
    let wrapped_key_hex = ctx.arg(5)?;
    if !ctx.blobs.contains(phi_digest) {
        return Err(ContractError::BadArgs(format!("phi blob {phi_digest} not stored")));
    }

    if let Err(detail) = rules.protocol.eligibility.check(&candidate) {
        return Err(ContractError::Violation(RuleViolation::new(ViolationCode::Ineligible, detail)));
    }

    let subject_id = next_seq(sim, "seq/subject", "S-");
    let record = SubjectRecord {
        subject_id: subject_id.clone(),
        phi_ref: Some(BlobRef {
            content_digest_hex: phi_digest.to_string(),
            size_bytes: ctx.blobs.size_of(phi_digest).unwrap_or(0),
            created_day: ctx.day,
        }),
        deid_ref: None,
        enrolled_at: ctx.day,
        site_id: site_id.to_string(),
        status: SubjectStatus::Enrolled,
    };
    let consent = ConsentRecord {
        subject_id: subject_id.clone(),
        granted_scopes: scopes.into_iter().collect(),
        granted_at: ctx.day,
        revoked_scopes: BTreeMap::new(),
    };
    sim.put_json(&subject_key(&subject_id), &record);
    sim.put_json(&consent_key(&subject_id), &consent);
    sim.put(&format!("attrs/{subject_id}"), serde_json::to_vec(&candidate)?);
    sim.put(&format!("subject_ident/{subject_ident}"), subject_id.clone().into_bytes());
    sim.put(&blobkey_key(phi_digest), wrapped_key_hex.as_bytes().to_vec());
    Ok(Some(subject_id))
}

/// args: [subject_id]. Rebuilds the clinical blob minus the protocol's
/// identifier fields; idempotent because the blob key is derived from
/// the de-identified plaintext.
fn deidentify_subject(
    rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::PrincipalInvestigator])?;
    let subject_id = ctx.arg(0)?;
    let mut subject: SubjectRecord = sim
        .get_json(&subject_key(subject_id))?
        .ok_or_else(|| ContractError::UnknownSubject(subject_id.to_string()))?;
    if subject.status != SubjectStatus::Enrolled {
        return Err(ContractError::NotEnrolled(subject_id.to_string()));
    }
    let phi_ref = subject
        .phi_ref
        .clone()
        .ok_or_else(|| ContractError::BadArgs(format!("subject {subject_id} has no phi blob")))?;

    let wrap = BlobKey::channel_wrap_key(ctx.channel_id);
    let wrapped_hex = sim
        .get(&blobkey_key(&phi_ref.content_digest_hex))
        .ok_or_else(|| ContractError::BadArgs("missing wrapped key for phi blob".into()))?;
    let wrapped: [u8; 32] = hex::decode(&wrapped_hex)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| ContractError::BadArgs("malformed wrapped key".into()))?;
    let phi_key = wrap.unwrap_key(&wrapped);
    let plaintext = ctx.blobs.fetch_blob(&phi_ref, &phi_key)?;

    let mut attrs: BTreeMap<String, AttrValue> = serde_json::from_slice(&plaintext)?;
    for field in &rules.protocol.identifier_fields {
        attrs.remove(field);
    }
    let deid_plain = serde_json::to_vec(&attrs)?;
    let deid_key = BlobKey::derive(&deid_plain);
    let deid_ref = ctx.blobs.store_blob(&deid_plain, &deid_key, ctx.day)?;
    let digest = deid_ref.content_digest_hex.clone();

    sim.put(&blobkey_key(&digest), hex::encode(wrap.wrap(&deid_key)).into_bytes());
    subject.deid_ref = Some(deid_ref);
    sim.put_json(&subject_key(subject_id), &subject);
    Ok(Some(digest))
}

/// args: [subject_id, scope] where scope "*" revokes all effective
/// scopes. Subjects may revoke only their own consent; PIs may act for
/// any subject. Losing the last scope withdraws the subject.
fn revoke_consent(ctx: &InvocationContext, sim: &mut TxSim) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::Subject, Role::PrincipalInvestigator])?;
    let subject_id = ctx.arg(0)?;
    let scope = ctx.arg(1)?;
    if ctx.invoker.role == Role::Subject {
        require_self(ctx, sim, subject_id)?;
    }
    let mut consent: ConsentRecord = sim
        .get_json(&consent_key(subject_id))?
        .ok_or_else(|| ContractError::UnknownSubject(subject_id.to_string()))?;

    let targets: Vec<String> = if scope == "*" {
        consent.effective_scopes().into_iter().collect()
    } else {
        if !consent.granted_scopes.contains(scope) {
            return Err(ContractError::BadArgs(format!(
                "scope '{scope}' was never granted by {subject_id}"
            )));
        }
        vec![scope.to_string()]
    };
    for t in targets {
        consent.revoked_scopes.entry(t).or_insert(ctx.day);
    }

    if consent.effective_scopes().is_empty() {
        let mut subject: SubjectRecord = sim
            .get_json(&subject_key(subject_id))?
            .ok_or_else(|| ContractError::UnknownSubject(subject_id.to_string()))?;
        subject.status = SubjectStatus::Withdrawn;
        sim.put_json(&subject_key(subject_id), &subject);
    }
    sim.put_json(&consent_key(subject_id), &consent);
    Ok(None)
}

/// args: [subject_id, severity, description_digest_hex]
fn report_ae_intake(ctx: &InvocationContext, sim: &mut TxSim) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::Subject])?;
    let subject_id = ctx.arg(0)?;
    let severity = parse_severity(ctx.arg(1)?)?;
    let description_digest = ctx.arg(2)?;
    require_self(ctx, sim, subject_id)?;
    if sim.get(&subject_key(subject_id)).is_none() {
        return Err(ContractError::UnknownSubject(subject_id.to_string()));
    }
    let intake_id = next_seq(sim, "seq/ae_intake", "AEI-");
    let record = IntakeRecord {
        intake_id: intake_id.clone(),
        subject_id: subject_id.to_string(),
        severity,
        description_digest: description_digest.to_string(),
        day: ctx.day,
    };
    sim.put_json(&format!("ae_intake/{intake_id}"), &record);
    Ok(Some(intake_id))
}

/// A subject identity may only act on the subject record it enrolled as.
fn require_self(ctx: &InvocationContext, sim: &mut TxSim, subject_id: &str) -> Result<(), ContractError> {
    let mapped = sim
        .get(&format!("subject_ident/{}", ctx.invoker.id))
        .and_then(|b| String::from_utf8(b).ok());
    if mapped.as_deref() == Some(subject_id) {
        Ok(())
    } else {
        Err(ContractError::Violation(RuleViolation::new(
            ViolationCode::UnauthorizedRole,
            format!("{} may not act for {subject_id}", ctx.invoker.id),
        )))
    }
}

/// Digest used for adverse-event description text, which itself stays
/// off the ledger.
pub fn description_digest(description: &str) -> String {
    hex::encode(sha256(description.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::ContractKind;
    use crate::contracts::testkit::Harness;
    use crate::ledger::WriteOp;
    use crate::records::{Severity, ViolationEntry};

    fn harness() -> Harness {
        Harness::new(ContractKind::Enrollment, "enrollment")
    }

    fn enroll_args(h: &Harness, attrs: &std::collections::BTreeMap<String, AttrValue>) -> Vec<String> {
        let (clinical, digest, wrapped) = h.prepare_phi(attrs);
        vec![
            clinical,
            "primary,secondary_analysis".to_string(),
            "site1".to_string(),
            "subj-101".to_string(),
            digest,
            wrapped,
        ]
    }

    #[test]
    fn eligible_candidate_enrolls_with_consent() {
        let mut h = harness();
        let id = h.enroll_subject("subj-101", "site1");
        assert_eq!(id, "S-0001");
        let (bytes, _) = h.ledger.get_state("subject/S-0001").unwrap();
        let record: SubjectRecord = serde_json::from_slice(bytes).unwrap();
        assert_eq!(record.status, SubjectStatus::Enrolled);
        assert!(record.phi_ref.is_some());
        let (bytes, _) = h.ledger.get_state("consent/S-0001").unwrap();
        let consent: ConsentRecord = serde_json::from_slice(bytes).unwrap();
        assert!(consent.permits("primary"));
        assert!(consent.permits("secondary_analysis"));

        // ids are never reused
        assert_eq!(h.enroll_subject("subj-102", "site1"), "S-0002");
    }

    #[test]
    fn underage_candidate_rejected_with_single_violation_entry() {
        let h = harness();
        let mut attrs = Harness::full_attrs("Minor");
        attrs.insert("age".into(), AttrValue::Num(17.0));
        let args = enroll_args(&h, &attrs);
        let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let result = h.invoke_as("pi-site1", "enroll_subject", &argrefs).unwrap();
        let v = result.violation.as_ref().expect("must be rejected");
        assert_eq!(v.code, ViolationCode::Ineligible);
        assert_eq!(v.detail, "age");
        // the write set is exactly the audit entry
        assert_eq!(result.write_set.len(), 1);
        assert!(result.write_set[0].0.starts_with("violation/"));
        let WriteOp::Put(bytes) = &result.write_set[0].1 else { panic!("expected put") };
        let entry: ViolationEntry = serde_json::from_slice(bytes).unwrap();
        assert_eq!(entry.code, ViolationCode::Ineligible);
        assert_eq!(entry.channel_id, "enrollment");
    }

    #[test]
    fn excluded_condition_rejected_naming_code() {
        let h = harness();
        let mut attrs = Harness::full_attrs("Excluded");
        attrs.insert("conditions".into(), AttrValue::set(&["414545008"]));
        let args = enroll_args(&h, &attrs);
        let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let result = h.invoke_as("pi-site1", "enroll_subject", &argrefs).unwrap();
        assert_eq!(result.violation.unwrap().detail, "exclusion:414545008");
    }

    #[test]
    fn coordinating_center_may_not_enroll() {
        let h = harness();
        let args = enroll_args(&h, &Harness::full_attrs("X"));
        let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let result = h.invoke_as("cc-1", "enroll_subject", &argrefs).unwrap();
        assert_eq!(result.violation.unwrap().code, ViolationCode::UnauthorizedRole);
    }

    #[test]
    fn unknown_scope_is_a_hard_error() {
        let h = harness();
        let mut args = enroll_args(&h, &Harness::full_attrs("X"));
        args[1] = "tertiary".to_string();
        let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        assert!(matches!(
            h.invoke_as("pi-site1", "enroll_subject", &argrefs),
            Err(ContractError::BadArgs(_))
        ));
    }

    #[test]
    fn identical_context_simulates_identically() {
        let h = harness();
        let args = enroll_args(&h, &Harness::full_attrs("Same"));
        let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let a = h.invoke_as("pi-site1", "enroll_subject", &argrefs).unwrap();
        let b = h.invoke_as("pi-site1", "enroll_subject", &argrefs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_function_rejected() {
        let h = harness();
        assert!(matches!(
            h.invoke_as("pi-site1", "frobnicate", &[]),
            Err(ContractError::UnknownFunction(_))
        ));
    }

    #[test]
    fn deidentify_strips_identifier_fields() {
        let mut h = harness();
        let sid = h.enroll_subject("subj-101", "site1");
        let result = h.call("pi-site1", "deidentify_subject", &[&sid]).unwrap();
        let digest = result.response.unwrap();

        // decrypt the deid blob via the channel-wrapped key on the ledger
        let wrap = BlobKey::channel_wrap_key("enrollment");
        let (wrapped_hex, _) = h.ledger.get_state(&blobkey_key(&digest)).unwrap();
        let wrapped: [u8; 32] =
            hex::decode(std::str::from_utf8(wrapped_hex).unwrap()).unwrap().try_into().unwrap();
        let (subject_bytes, _) = h.ledger.get_state(&subject_key(&sid)).unwrap();
        let subject: SubjectRecord = serde_json::from_slice(subject_bytes).unwrap();
        let deid_ref = subject.deid_ref.expect("deid ref recorded");
        assert_eq!(deid_ref.content_digest_hex, digest);
        let plain = h.blobs.fetch_blob(&deid_ref, &wrap.unwrap_key(&wrapped)).unwrap();
        let attrs: BTreeMap<String, AttrValue> = serde_json::from_slice(&plain).unwrap();
        for field in ["name", "dob", "mrn"] {
            assert!(!attrs.contains_key(field), "{field} must be stripped");
        }
        assert!(attrs.contains_key("age"));
        assert!(attrs.contains_key("conditions"));

        // idempotent: repeating yields the same digest
        let again = h.call("pi-site1", "deidentify_subject", &[&sid]).unwrap();
        assert_eq!(again.response.unwrap(), digest);
    }

    #[test]
    fn deidentify_gates() {
        let mut h = harness();
        let sid = h.enroll_subject("subj-101", "site1");
        let r = h.invoke_as("analyst-1", "deidentify_subject", &[&sid]).unwrap();
        assert_eq!(r.violation.unwrap().code, ViolationCode::UnauthorizedRole);
        assert!(matches!(
            h.invoke_as("pi-site1", "deidentify_subject", &["S-9999"]),
            Err(ContractError::UnknownSubject(_))
        ));
    }

    #[test]
    fn subject_revokes_own_scope() {
        let mut h = harness();
        let sid = h.enroll_subject("subj-101", "site1");
        h.call("subj-101", "revoke_consent", &[&sid, "secondary_analysis"]).unwrap();
        let (bytes, _) = h.ledger.get_state(&consent_key(&sid)).unwrap();
        let consent: ConsentRecord = serde_json::from_slice(bytes).unwrap();
        assert!(consent.permits("primary"));
        assert!(!consent.permits("secondary_analysis"));
        // still enrolled while any scope is live
        let (bytes, _) = h.ledger.get_state(&subject_key(&sid)).unwrap();
        let subject: SubjectRecord = serde_json::from_slice(bytes).unwrap();
        assert_eq!(subject.status, SubjectStatus::Enrolled);
    }

    #[test]
    fn revoking_everything_withdraws_subject() {
        let mut h = harness();
        let sid = h.enroll_subject("subj-101", "site1");
        h.call("subj-101", "revoke_consent", &[&sid, "*"]).unwrap();
        let (bytes, _) = h.ledger.get_state(&subject_key(&sid)).unwrap();
        let subject: SubjectRecord = serde_json::from_slice(bytes).unwrap();
        assert_eq!(subject.status, SubjectStatus::Withdrawn);
    }

    #[test]
    fn subject_cannot_touch_another_subjects_consent() {
        let mut h = harness();
        let sid = h.enroll_subject("subj-101", "site1");
        let r = h.invoke_as("subj-102", "revoke_consent", &[&sid, "primary"]).unwrap();
        assert_eq!(r.violation.unwrap().code, ViolationCode::UnauthorizedRole);
        let r = h.invoke_as("sponsor-1", "revoke_consent", &[&sid, "primary"]).unwrap();
        assert_eq!(r.violation.unwrap().code, ViolationCode::UnauthorizedRole);
    }

    #[test]
    fn subject_files_intake_for_self_only() {
        let mut h = harness();
        let sid = h.enroll_subject("subj-101", "site1");
        let digest = description_digest("nausea after dose");
        let r = h.call("subj-101", "report_ae_intake", &[&sid, "Mild", &digest]).unwrap();
        let intake_id = r.response.unwrap();
        assert_eq!(intake_id, "AEI-0001");
        let (bytes, _) = h.ledger.get_state(&format!("ae_intake/{intake_id}")).unwrap();
        let intake: IntakeRecord = serde_json::from_slice(bytes).unwrap();
        assert_eq!(intake.severity, Severity::Mild);
        assert_eq!(intake.description_digest, digest);

        let r = h.invoke_as("subj-102", "report_ae_intake", &[&sid, "Mild", &digest]).unwrap();
        assert_eq!(r.violation.unwrap().code, ViolationCode::UnauthorizedRole);
    }
}
