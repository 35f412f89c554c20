//! Analysis-access contract: consent-gated grants over de-identified
//! data, single-use key redemption, and revocation sweeps.

use crate::chaincode::{ContractError, InvocationContext, RuleSet, RuleViolation, TxSim};
use crate::codec::sha256_concat;
use crate::identity::Role;
use crate::offchain::{BlobKey, BlobRef};
use crate::records::{AnalysisGrant, ConsentRecord, ViolationCode};
use serde::{Deserialize, Serialize};

use super::next_seq;

const TOKEN_TAG: &[u8] = b"trialmesh/token/v1";

/// Projection of one subject's de-identified blob onto the analysis
/// channel: the reference plus the data key wrapped for this channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeidShare {
    pub subject_id: String,
    pub blob: BlobRef,
    pub wrapped_key_hex: String,
}

/// What a successful redemption hands the analyst: per subject, the blob
/// reference and the unwrapped data key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportShare {
    pub subject_id: String,
    pub blob: BlobRef,
    pub key_hex: String,
}

pub fn invoke(
    rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    match ctx.function {
        "sync_consent" => sync_consent(ctx, sim),
        "sync_deid" => sync_deid(ctx, sim),
        "revoke_grants" => revoke_grants(ctx, sim),
        "request_access" => request_access(rules, ctx, sim),
        "redeem_key" => redeem_key(ctx, sim),
        other => Err(ContractError::UnknownFunction(other.to_string())),
    }
}

pub fn consent_key(subject_id: &str) -> String {
    format!("consent/{subject_id}")
}

pub fn deid_key(subject_id: &str) -> String {
    format!("deid/{subject_id}")
}

pub fn grant_key(grant_id: &str) -> String {
    format!("grant/{grant_id}")
}

/// Deterministic redemption token bound to the grant's identity fields.
pub fn key_token(grant_id: &str, analyst_id: &str, scope: &str, day: u64) -> String {
    hex::encode(sha256_concat(&[
        TOKEN_TAG,
        grant_id.as_bytes(),
        analyst_id.as_bytes(),
        scope.as_bytes(),
        &day.to_be_bytes(),
    ]))
}

/// args: [subject_id, consent_json] — enrollment-channel consent
/// projection, kept current by the client layer on grant and revoke.
fn sync_consent(ctx: &InvocationContext, sim: &mut TxSim) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::PrincipalInvestigator, Role::CoordinatingCenter])?;
    let subject_id = ctx.arg(0)?;
    let consent: ConsentRecord = serde_json::from_str(ctx.arg(1)?)?;
    if consent.subject_id != subject_id {
        return Err(ContractError::BadArgs(format!(
            "consent record is for '{}', not '{subject_id}'",
            consent.subject_id
        )));
    }
    sim.put_json(&consent_key(subject_id), &consent);
    Ok(None)
}

/// args: [subject_id, blobref_json, wrapped_key_hex] — the de-identified
/// blob reference with its data key re-wrapped for this channel.
fn sync_deid(ctx: &InvocationContext, sim: &mut TxSim) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::PrincipalInvestigator, Role::CoordinatingCenter])?;
    let subject_id = ctx.arg(0)?;
    let blob: BlobRef = serde_json::from_str(ctx.arg(1)?)?;
    let wrapped_key_hex = ctx.arg(2)?;
    let wrapped = hex::decode(wrapped_key_hex)
        .ok()
        .and_then(|v| <[u8; 32]>::try_from(v).ok())
        .ok_or_else(|| ContractError::BadArgs("wrapped key must be 32 bytes hex".into()))?;
    let share = DeidShare {
        subject_id: subject_id.to_string(),
        blob,
        wrapped_key_hex: hex::encode(wrapped),
    };
    sim.put_json(&deid_key(subject_id), &share);
    Ok(None)
}

/// args: [subject_id, scope]. Sweeps every open grant that covers the
/// subject under the scope and marks it revoked; returns the count.
fn revoke_grants(ctx: &InvocationContext, sim: &mut TxSim) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::PrincipalInvestigator, Role::CoordinatingCenter])?;
    let subject_id = ctx.arg(0)?;
    let scope = ctx.arg(1)?;
    let mut revoked = 0u64;
    for (key, bytes) in sim.scan("grant/") {
        let mut grant: AnalysisGrant = serde_json::from_slice(&bytes)?;
        if grant.redeemed || grant.revoked {
            continue;
        }
        if grant.scope == scope && grant.subject_ids.iter().any(|s| s == subject_id) {
            grant.revoked = true;
            sim.put_json(&key, &grant);
            revoked += 1;
        }
    }
    Ok(Some(revoked.to_string()))
}

/// args: [scope, subjects_csv]. Every named subject must currently
/// consent to the scope; one refusal rejects the whole request.
fn request_access(
    rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::Analyst])?;
    let scope = ctx.arg(0)?;
    let subjects_csv = ctx.arg(1)?;
    if !rules.protocol.consent_scopes.iter().any(|s| s == scope) {
        return Err(ContractError::BadArgs(format!("unknown consent scope '{scope}'")));
    }
    let subject_ids: Vec<String> =
        subjects_csv.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    if subject_ids.is_empty() {
        return Err(ContractError::BadArgs("no subjects requested".into()));
    }
    for subject_id in &subject_ids {
        let permits = sim
            .get_json::<ConsentRecord>(&consent_key(subject_id))?
            .map(|c| c.permits(scope))
            .unwrap_or(false);
        if !permits {
            return Err(ContractError::Violation(RuleViolation::new(
                ViolationCode::MissingConsent,
                format!("{subject_id} has no effective consent for scope {scope}"),
            )));
        }
    }
    let grant_id = next_seq(sim, "seq/grant", "G-");
    let grant = AnalysisGrant {
        grant_id: grant_id.clone(),
        analyst_id: ctx.invoker.id.clone(),
        scope: scope.to_string(),
        subject_ids,
        key_token: key_token(&grant_id, &ctx.invoker.id, scope, ctx.day),
        issued_day: ctx.day,
        redeemed: false,
        revoked: false,
    };
    sim.put_json(&grant_key(&grant_id), &grant);
    Ok(Some(serde_json::to_string(&grant)?))
}

/// args: [grant_id, key_token]. Single use: the grant flips to redeemed
/// in the same transaction that releases the keys, so a second
/// redemption conflicts or fails outright.
fn redeem_key(ctx: &InvocationContext, sim: &mut TxSim) -> Result<Option<String>, ContractError> {
    ctx.require_role(&[Role::Analyst])?;
    let grant_id = ctx.arg(0)?;
    let presented = ctx.arg(1)?;
    let mut grant: AnalysisGrant = sim
        .get_json(&grant_key(grant_id))?
        .ok_or_else(|| ContractError::UnknownGrant(grant_id.to_string()))?;
    if grant.analyst_id != ctx.invoker.id {
        return Err(ContractError::Violation(RuleViolation::new(
            ViolationCode::UnauthorizedRole,
            format!("{} may not redeem {grant_id}", ctx.invoker.id),
        )));
    }
    if grant.revoked {
        return Err(ContractError::RevokedGrant(grant_id.to_string()));
    }
    if grant.redeemed {
        return Err(ContractError::AlreadyRedeemed(grant_id.to_string()));
    }
    if presented != grant.key_token {
        return Err(ContractError::BadToken(grant_id.to_string()));
    }
    // consent may have been withdrawn after the grant was issued; the
    // revocation sweep normally catches this, this is the backstop
    for subject_id in &grant.subject_ids {
        let permits = sim
            .get_json::<ConsentRecord>(&consent_key(subject_id))?
            .map(|c| c.permits(&grant.scope))
            .unwrap_or(false);
        if !permits {
            return Err(ContractError::RevokedGrant(grant_id.to_string()));
        }
    }
    let wrap = BlobKey::channel_wrap_key(ctx.channel_id);
    let mut exports = Vec::new();
    for subject_id in &grant.subject_ids {
        let share: DeidShare = sim.get_json(&deid_key(subject_id))?.ok_or_else(|| {
            ContractError::BadArgs(format!("no de-identified data for {subject_id}"))
        })?;
        let wrapped: [u8; 32] = hex::decode(&share.wrapped_key_hex)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| ContractError::BadArgs(format!("corrupt key share for {subject_id}")))?;
        exports.push(ExportShare {
            subject_id: subject_id.clone(),
            blob: share.blob,
            key_hex: hex::encode(wrap.unwrap_key(&wrapped).0),
        });
    }
    grant.redeemed = true;
    sim.put_json(&grant_key(grant_id), &grant);
    Ok(Some(serde_json::to_string(&exports)?))
}
