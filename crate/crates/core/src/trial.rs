//! Cross-channel trial workflows. The driver owns a [`Network`] and
//! performs the client-side work the contracts cannot: preparing and
//! encrypting PHI blobs before enrollment, projecting records onto the
//! channels that need them, re-wrapping blob keys between channels, and
//! rendering redeemed data sets as CSV.
//!
//! Identifier fields never leave the client unencrypted: the full
//! attribute map goes into an encrypted off-chain blob, and only the
//! de-identified remainder appears in contract arguments or state.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::chaincode::{approval_message, RuleSet};
use crate::contracts::analysis::ExportShare;
use crate::contracts::enrollment::{blobkey_key, consent_key, description_digest, subject_key};
use crate::identity::Role;
use crate::ledger::ValidityFlag;
use crate::network::{standard_channel_configs, NetError, Network, TxOutcome};
use crate::offchain::{BlobError, BlobKey};
use crate::protocol::{AttrValue, ProtocolFragment, TrialProtocol};
use crate::records::{AnalysisGrant, SubjectRecord, VisitRecord};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("no principal investigator enrolled for site '{0}'")]
    UnknownSite(String),
    #[error("no enrolled identity with role {0}")]
    MissingRole(&'static str),
    #[error("subject '{0}' has no committed record")]
    UnknownSubject(String),
    #[error("no key token cached for grant '{0}'")]
    UnknownGrant(String),
    #[error("projection failed: {0}")]
    Projection(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Identity(#[from] crate::identity::IdentityError),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error(transparent)]
    Codec(#[from] serde_json::Error),
}

/// Outcome of an adverse-event report: the enrollment-channel intake
/// transaction when the reporter was a subject, and the monitoring
/// report the staff mirror produced.
#[derive(Debug)]
pub struct AeOutcome {
    pub intake: Option<TxOutcome>,
    pub report: Option<TxOutcome>,
}

#[derive(Debug)]
pub struct ExportOutcome {
    pub outcome: TxOutcome,
    /// Present only when the redemption committed cleanly.
    pub csv: Option<String>,
}

pub fn is_valid_commit(outcome: &TxOutcome) -> bool {
    matches!(outcome, TxOutcome::Committed { validity: ValidityFlag::Valid, .. })
}

fn expect_valid(outcome: &TxOutcome, what: &str) -> Result<(), DriverError> {
    if is_valid_commit(outcome) {
        Ok(())
    } else {
        Err(DriverError::Projection(format!("{what}: {outcome:?}")))
    }
}

pub struct TrialDriver {
    pub net: Network,
    grant_tokens: BTreeMap<String, String>,
}

impl TrialDriver {
    pub fn new(net: Network) -> TrialDriver {
        TrialDriver { net, grant_tokens: BTreeMap::new() }
    }

    /// Start a network over the roster and lay out the standard four
    /// channels for the protocol.
    pub fn standard(
        roster: &[(String, Role, Option<String>)],
        blob_root: &Path,
        protocol: &TrialProtocol,
    ) -> Result<TrialDriver, DriverError> {
        let mut net = Network::start(roster, blob_root)?;
        for (config, rules) in standard_channel_configs(&net.msp, protocol) {
            net.create_channel(config, rules)?;
        }
        Ok(TrialDriver::new(net))
    }

    fn lowest_with_role(&self, role: Role, label: &'static str) -> Result<String, DriverError> {
        self.net
            .msp
            .directory()
            .into_iter()
            .filter(|i| i.role == role && !i.revoked)
            .map(|i| i.id)
            .min()
            .ok_or(DriverError::MissingRole(label))
    }

    fn site_pi(&self, site_id: &str) -> Result<String, DriverError> {
        self.net
            .msp
            .directory()
            .into_iter()
            .filter(|i| {
                i.role == Role::PrincipalInvestigator
                    && !i.revoked
                    && i.site_id.as_deref() == Some(site_id)
            })
            .map(|i| i.id)
            .min()
            .ok_or_else(|| DriverError::UnknownSite(site_id.to_string()))
    }

    fn any_pi(&self) -> Result<String, DriverError> {
        self.lowest_with_role(Role::PrincipalInvestigator, "PrincipalInvestigator")
    }

    fn coordinator(&self) -> Result<String, DriverError> {
        self.lowest_with_role(Role::CoordinatingCenter, "CoordinatingCenter")
    }

    fn subject_record(&self, subject_id: &str) -> Result<SubjectRecord, DriverError> {
        let pi = self.any_pi()?;
        let (value, _) = self
            .net
            .read_channel(&pi, "enrollment", &subject_key(subject_id))?
            .ok_or_else(|| DriverError::UnknownSubject(subject_id.to_string()))?;
        Ok(serde_json::from_slice(&value)?)
    }

    /// Screen and enroll one candidate. The full attribute map is stored
    /// as an encrypted blob keyed to the enrollment channel; the
    /// contract only ever sees the de-identified attributes. On a clean
    /// commit the subject record (sans blob references) is projected to
    /// the monitoring channel and the consent record to the analysis
    /// channel.
    pub fn enroll(
        &mut self,
        site_id: &str,
        subject_ident: &str,
        attrs: &BTreeMap<String, AttrValue>,
        scopes: &[String],
    ) -> Result<TxOutcome, DriverError> {
        let pi = self.site_pi(site_id)?;
        let identifier_fields = self
            .net
            .current_rules("enrollment")
            .ok_or_else(|| DriverError::Projection("enrollment channel has no contract".into()))?
            .1
            .protocol
            .identifier_fields
            .clone();
        let plaintext = serde_json::to_vec(attrs)?;
        let data_key = BlobKey::derive(&plaintext);
        let blob = self.net.blobs.store_blob(&plaintext, &data_key, self.net.day)?;
        let wrapped = BlobKey::channel_wrap_key("enrollment").wrap(&data_key);
        let clinical: BTreeMap<&String, &AttrValue> =
            attrs.iter().filter(|(k, _)| !identifier_fields.contains(*k)).collect();
        let args = vec![
            serde_json::to_string(&clinical)?,
            scopes.join(","),
            site_id.to_string(),
            subject_ident.to_string(),
            blob.content_digest_hex.clone(),
            hex::encode(wrapped),
        ];
        let outcome = self.net.transact(&pi, "enrollment", "enroll_subject", args)?;
        if let TxOutcome::Committed {
            validity: ValidityFlag::Valid,
            response: Some(subject_id),
            ..
        } = &outcome
        {
            let subject_id = subject_id.clone();
            self.project_subject(&pi, &subject_id)?;
            self.project_consent(&subject_id)?;
        }
        Ok(outcome)
    }

    /// Monitoring sees the subject's administrative record only: both
    /// blob references are stripped before the sync.
    fn project_subject(&mut self, pi: &str, subject_id: &str) -> Result<(), DriverError> {
        let (value, _) = self
            .net
            .read_channel(pi, "enrollment", &subject_key(subject_id))?
            .ok_or_else(|| DriverError::UnknownSubject(subject_id.to_string()))?;
        let mut record: SubjectRecord = serde_json::from_slice(&value)?;
        record.phi_ref = None;
        record.deid_ref = None;
        let outcome = self.net.transact(
            pi,
            "monitoring",
            "sync_subject",
            vec![serde_json::to_string(&record)?],
        )?;
        expect_valid(&outcome, "sync_subject projection")
    }

    fn project_consent(&mut self, subject_id: &str) -> Result<(), DriverError> {
        let pi = self.any_pi()?;
        let (value, _) = self
            .net
            .read_channel(&pi, "enrollment", &consent_key(subject_id))?
            .ok_or_else(|| DriverError::UnknownSubject(subject_id.to_string()))?;
        let consent_json = String::from_utf8_lossy(&value).into_owned();
        let outcome = self.net.transact(
            &pi,
            "analysis",
            "sync_consent",
            vec![subject_id.to_string(), consent_json],
        )?;
        expect_valid(&outcome, "sync_consent projection")
    }

    /// Produce the subject's de-identified blob on the enrollment
    /// channel, then re-wrap its data key for the analysis channel and
    /// sync the share there.
    pub fn deidentify(&mut self, subject_id: &str) -> Result<TxOutcome, DriverError> {
        let record = self.subject_record(subject_id)?;
        let pi = self.site_pi(&record.site_id)?;
        let outcome =
            self.net.transact(&pi, "enrollment", "deidentify_subject", vec![subject_id.to_string()])?;
        if let TxOutcome::Committed {
            validity: ValidityFlag::Valid,
            response: Some(digest),
            ..
        } = &outcome
        {
            let updated = self.subject_record(subject_id)?;
            let deid_ref = updated
                .deid_ref
                .ok_or_else(|| DriverError::Projection("deid blob missing after deidentify".into()))?;
            let (wrapped_hex, _) = self
                .net
                .read_channel(&pi, "enrollment", &blobkey_key(digest))?
                .ok_or_else(|| DriverError::Projection("deid blob key missing".into()))?;
            let wrapped: [u8; 32] = hex::decode(&wrapped_hex)
                .ok()
                .and_then(|v| v.try_into().ok())
                .ok_or_else(|| DriverError::Projection("malformed wrapped key".into()))?;
            let data_key = BlobKey::channel_wrap_key("enrollment").unwrap_key(&wrapped);
            let analysis_wrapped = BlobKey::channel_wrap_key("analysis").wrap(&data_key);
            let sync = self.net.transact(
                &pi,
                "analysis",
                "sync_deid",
                vec![
                    subject_id.to_string(),
                    serde_json::to_string(&deid_ref)?,
                    hex::encode(analysis_wrapped),
                ],
            )?;
            expect_valid(&sync, "sync_deid projection")?;
        }
        Ok(outcome)
    }

    /// Revoke consent on the enrollment channel, then propagate: the
    /// consent projection on the analysis channel is refreshed and every
    /// outstanding unredeemed grant touching the subject and scope is
    /// revoked. `scope` may be `*`.
    pub fn revoke_consent(
        &mut self,
        actor: &str,
        subject_id: &str,
        scope: &str,
    ) -> Result<TxOutcome, DriverError> {
        let outcome = self.net.transact(
            actor,
            "enrollment",
            "revoke_consent",
            vec![subject_id.to_string(), scope.to_string()],
        )?;
        if is_valid_commit(&outcome) {
            self.project_consent(subject_id)?;
            let scopes: Vec<String> = if scope == "*" {
                self.net
                    .current_rules("analysis")
                    .map(|(_, rules)| rules.protocol.consent_scopes.clone())
                    .unwrap_or_default()
            } else {
                vec![scope.to_string()]
            };
            let pi = self.any_pi()?;
            for s in scopes {
                let swept = self.net.transact(
                    &pi,
                    "analysis",
                    "revoke_grants",
                    vec![subject_id.to_string(), s],
                )?;
                expect_valid(&swept, "revoke_grants projection")?;
            }
        }
        Ok(outcome)
    }

    pub fn record_visit(
        &mut self,
        entered_by: &str,
        record: &VisitRecord,
    ) -> Result<TxOutcome, DriverError> {
        Ok(self.net.transact(
            entered_by,
            "monitoring",
            "record_visit",
            vec![serde_json::to_string(record)?],
        )?)
    }

    /// File an adverse event. Subjects cannot reach the monitoring
    /// channel, so their report lands as an enrollment-channel intake
    /// record and the coordinating center mirrors it into monitoring;
    /// staff reporters file directly.
    pub fn report_ae(
        &mut self,
        reporter: &str,
        subject_id: &str,
        severity: &str,
        description: &str,
    ) -> Result<AeOutcome, DriverError> {
        let digest = description_digest(description);
        let role = self.net.msp.get(reporter)?.role;
        if role == Role::Subject {
            let intake = self.net.transact(
                reporter,
                "enrollment",
                "report_ae_intake",
                vec![subject_id.to_string(), severity.to_string(), digest.clone()],
            )?;
            if !is_valid_commit(&intake) {
                return Ok(AeOutcome { intake: Some(intake), report: None });
            }
            let cc = self.coordinator()?;
            let report = self.net.transact(
                &cc,
                "monitoring",
                "report_ae",
                vec![
                    subject_id.to_string(),
                    severity.to_string(),
                    digest,
                    reporter.to_string(),
                ],
            )?;
            Ok(AeOutcome { intake: Some(intake), report: Some(report) })
        } else {
            let report = self.net.transact(
                reporter,
                "monitoring",
                "report_ae",
                vec![
                    subject_id.to_string(),
                    severity.to_string(),
                    digest,
                    reporter.to_string(),
                ],
            )?;
            Ok(AeOutcome { intake: None, report: Some(report) })
        }
    }

    pub fn update_ae(
        &mut self,
        actor: &str,
        ae_id: &str,
        new_status: &str,
    ) -> Result<TxOutcome, DriverError> {
        Ok(self.net.transact(
            actor,
            "monitoring",
            "update_ae",
            vec![ae_id.to_string(), new_status.to_string()],
        )?)
    }

    /// Request a scoped analysis grant. On success the grant's one-time
    /// key token is cached for later redemption through this driver.
    pub fn request_access(
        &mut self,
        analyst: &str,
        scope: &str,
        subject_ids: &[String],
    ) -> Result<TxOutcome, DriverError> {
        let outcome = self.net.transact(
            analyst,
            "analysis",
            "request_access",
            vec![scope.to_string(), subject_ids.join(",")],
        )?;
        if let TxOutcome::Committed {
            validity: ValidityFlag::Valid,
            response: Some(grant_json),
            ..
        } = &outcome
        {
            let grant: AnalysisGrant = serde_json::from_str(grant_json)?;
            self.grant_tokens.insert(grant.grant_id.clone(), grant.key_token);
        }
        Ok(outcome)
    }

    pub fn grant_token(&self, grant_id: &str) -> Option<&str> {
        self.grant_tokens.get(grant_id).map(String::as_str)
    }

    /// Redeem a grant with its cached key token.
    pub fn redeem_key(&mut self, analyst: &str, grant_id: &str) -> Result<TxOutcome, DriverError> {
        let token = self
            .grant_tokens
            .get(grant_id)
            .cloned()
            .ok_or_else(|| DriverError::UnknownGrant(grant_id.to_string()))?;
        self.redeem_with_token(analyst, grant_id, &token)
    }

    pub fn redeem_with_token(
        &mut self,
        analyst: &str,
        grant_id: &str,
        token: &str,
    ) -> Result<TxOutcome, DriverError> {
        Ok(self.net.transact(
            analyst,
            "analysis",
            "redeem_key",
            vec![grant_id.to_string(), token.to_string()],
        )?)
    }

    /// Redeem a grant and materialize the de-identified data set as CSV.
    pub fn export_csv(
        &mut self,
        analyst: &str,
        grant_id: &str,
    ) -> Result<ExportOutcome, DriverError> {
        let outcome = self.redeem_key(analyst, grant_id)?;
        let TxOutcome::Committed {
            validity: ValidityFlag::Valid,
            response: Some(shares_json),
            ..
        } = &outcome
        else {
            return Ok(ExportOutcome { outcome, csv: None });
        };
        let shares: Vec<ExportShare> = serde_json::from_str(shares_json)?;
        let mut rows: BTreeMap<String, BTreeMap<String, AttrValue>> = BTreeMap::new();
        for share in &shares {
            let key = hex::decode(&share.key_hex)
                .ok()
                .and_then(|v| <[u8; 32]>::try_from(v).ok())
                .map(BlobKey)
                .ok_or_else(|| DriverError::Projection("malformed export key".into()))?;
            let plaintext = self.net.blobs.fetch_blob(&share.blob, &key)?;
            rows.insert(share.subject_id.clone(), serde_json::from_slice(&plaintext)?);
        }
        Ok(ExportOutcome { outcome, csv: Some(render_csv(&rows)) })
    }

    /// Amend a channel's protocol: apply the fragment to the current
    /// rules, collect approval signatures from `approver_ids` (which
    /// must satisfy the upgrade policy: an IRB signature plus a majority
    /// of the channel's endorsers), and install the new contract
    /// version.
    pub fn amend(
        &mut self,
        channel_id: &str,
        fragment: &ProtocolFragment,
        new_version: &str,
        approver_ids: &[String],
    ) -> Result<(), DriverError> {
        let (descriptor, rules) = self
            .net
            .current_rules(channel_id)
            .ok_or_else(|| DriverError::Projection(format!("no contract on '{channel_id}'")))?;
        let name = descriptor.name.clone();
        let new_rules = RuleSet {
            kind: rules.kind,
            protocol: rules.protocol.apply_fragment(fragment, new_version),
        };
        let message = approval_message(channel_id, &name, new_version, &new_rules.digest());
        let mut approvals = Vec::new();
        for id in approver_ids {
            approvals.push((id.clone(), self.net.msp.sign(id, &message)?));
        }
        self.net.upgrade_contract(channel_id, new_version, new_rules, &approvals)?;
        Ok(())
    }

    pub fn file_report(
        &mut self,
        filed_by: &str,
        range_lo: u64,
        range_hi: u64,
        digest_hex: &str,
    ) -> Result<TxOutcome, DriverError> {
        Ok(self.net.transact(
            filed_by,
            "report",
            "file_report",
            vec![range_lo.to_string(), range_hi.to_string(), digest_hex.to_string()],
        )?)
    }
}

/// Render subject attribute rows as CSV: `subject_id` first, remaining
/// columns the sorted union of attribute names, rows sorted by subject
/// id. Sets are semicolon-joined in sorted order.
pub fn render_csv(rows: &BTreeMap<String, BTreeMap<String, AttrValue>>) -> String {
    let mut columns: BTreeSet<String> = BTreeSet::new();
    for attrs in rows.values() {
        columns.extend(attrs.keys().cloned());
    }
    let mut out = String::from("subject_id");
    for column in &columns {
        out.push(',');
        out.push_str(&csv_cell(column));
    }
    out.push('\n');
    for (subject_id, attrs) in rows {
        out.push_str(&csv_cell(subject_id));
        for column in &columns {
            out.push(',');
            if let Some(value) = attrs.get(column) {
                out.push_str(&csv_cell(&attr_text(value)));
            }
        }
        out.push('\n');
    }
    out
}

fn attr_text(value: &AttrValue) -> String {
    match value {
        AttrValue::Bool(b) => b.to_string(),
        AttrValue::Num(n) if n.fract() == 0.0 && n.abs() < 9e15 => format!("{}", *n as i64),
        AttrValue::Num(n) => n.to_string(),
        AttrValue::Str(s) => s.clone(),
        AttrValue::Set(set) => set.iter().cloned().collect::<Vec<_>>().join(";"),
    }
}

fn csv_cell(text: &str) -> String {
    if text.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::ContractError;
    use crate::records::{ActivityEntry, AeStatus, ViolationCode};
    use tempfile::TempDir;

    fn roster() -> Vec<(String, Role, Option<String>)> {
        [
            ("pi-site1", Role::PrincipalInvestigator, Some("site1")),
            ("pi-site2", Role::PrincipalInvestigator, Some("site2")),
            ("cc-1", Role::CoordinatingCenter, None),
            ("dsmb-1", Role::Dsmb, None),
            ("irb-1", Role::Irb, None),
            ("fda-1", Role::RegulatoryAgency, None),
            ("sponsor-1", Role::Sponsor, None),
            ("analyst-1", Role::Analyst, None),
            ("subj-101", Role::Subject, Some("site1")),
            ("subj-102", Role::Subject, Some("site1")),
        ]
        .into_iter()
        .map(|(id, role, site)| (id.to_string(), role, site.map(str::to_string)))
        .collect()
    }

    fn driver(tmp: &TempDir) -> TrialDriver {
        TrialDriver::standard(&roster(), tmp.path(), &TrialProtocol::fixture()).unwrap()
    }

    fn full_attrs(name: &str) -> BTreeMap<String, AttrValue> {
        [
            ("name", AttrValue::Str(name.to_string())),
            ("dob", AttrValue::Str("1984-02-17".to_string())),
            ("mrn", AttrValue::Str("MRN-556677".to_string())),
            ("age", AttrValue::Num(42.0)),
            ("sex", AttrValue::Str("F".to_string())),
            ("conditions", AttrValue::set(&["73211009"])),
            ("prior_treatments", AttrValue::set(&[])),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn scopes() -> Vec<String> {
        vec!["primary".to_string(), "secondary_analysis".to_string()]
    }

    fn enroll_ok(driver: &mut TrialDriver, ident: &str, site: &str) -> String {
        let outcome = driver.enroll(site, ident, &full_attrs(&format!("Person {ident}")), &scopes()).unwrap();
        let TxOutcome::Committed { response: Some(subject_id), .. } = outcome else {
            panic!("enrollment did not commit: {outcome:?}");
        };
        subject_id
    }

    #[test]
    fn enrollment_projects_and_keeps_identifiers_off_ledger() {
        let tmp = TempDir::new().unwrap();
        let mut driver = driver(&tmp);
        let subject_id = enroll_ok(&mut driver, "subj-101", "site1");
        assert_eq!(subject_id, "S-0001");
        // monitoring got the record, stripped of blob references
        let (value, _) = driver
            .net
            .read_channel("dsmb-1", "monitoring", &subject_key(&subject_id))
            .unwrap()
            .unwrap();
        let record: SubjectRecord = serde_json::from_slice(&value).unwrap();
        assert!(record.phi_ref.is_none() && record.deid_ref.is_none());
        assert_eq!(record.site_id, "site1");
        // analysis got the consent projection
        assert!(driver
            .net
            .read_channel("analyst-1", "analysis", &consent_key(&subject_id))
            .unwrap()
            .is_some());
        // no identifier key or fixture value in committed enrollment state
        let state = driver.net.scan_channel("pi-site1", "enrollment", "").unwrap();
        for (key, value) in &state {
            let text = String::from_utf8_lossy(value);
            for leak in ["\"name\"", "\"dob\"", "\"mrn\"", "1984-02-17", "MRN-556677"] {
                assert!(!text.contains(leak), "{leak} leaked into {key}");
            }
        }
    }

    #[test]
    fn ineligible_candidate_is_rejected_without_projection() {
        let tmp = TempDir::new().unwrap();
        let mut driver = driver(&tmp);
        let mut attrs = full_attrs("Person X");
        attrs.insert("age".to_string(), AttrValue::Num(15.0));
        let outcome = driver.enroll("site1", "subj-101", &attrs, &scopes()).unwrap();
        let TxOutcome::Rejected { entry, .. } = &outcome else {
            panic!("expected rejection, got {outcome:?}");
        };
        assert_eq!(entry.code, ViolationCode::Ineligible);
        // the violation landed in committed enrollment state
        let hits = driver.net.scan_channel("pi-site1", "enrollment", "violation/").unwrap();
        assert_eq!(hits.len(), 1);
        // and nothing was projected anywhere
        assert!(driver.net.scan_channel("dsmb-1", "monitoring", "subject/").unwrap().is_empty());
        assert!(driver.net.scan_channel("analyst-1", "analysis", "consent/").unwrap().is_empty());
    }

    #[test]
    fn deidentify_then_export_round_trips_without_identifiers() {
        let tmp = TempDir::new().unwrap();
        let mut driver = driver(&tmp);
        let s1 = enroll_ok(&mut driver, "subj-101", "site1");
        let s2 = enroll_ok(&mut driver, "subj-102", "site1");
        assert!(is_valid_commit(&driver.deidentify(&s1).unwrap()));
        assert!(is_valid_commit(&driver.deidentify(&s2).unwrap()));
        let outcome = driver
            .request_access("analyst-1", "secondary_analysis", &[s1.clone(), s2.clone()])
            .unwrap();
        let TxOutcome::Committed { response: Some(grant_json), .. } = &outcome else {
            panic!("expected grant, got {outcome:?}");
        };
        let grant: AnalysisGrant = serde_json::from_str(grant_json).unwrap();
        let export = driver.export_csv("analyst-1", &grant.grant_id).unwrap();
        let csv = export.csv.expect("redemption succeeded");
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "subject_id,age,conditions,prior_treatments,sex"
        );
        assert_eq!(lines.next().unwrap(), format!("{s1},42,73211009,,F"));
        assert_eq!(lines.next().unwrap(), format!("{s2},42,73211009,,F"));
        for leak in ["name", "dob", "mrn", "1984-02-17", "MRN-556677", "Person"] {
            assert!(!csv.contains(leak), "{leak} leaked into export");
        }
        // the grant was one-time
        let again = driver.redeem_key("analyst-1", &grant.grant_id).unwrap_err();
        assert!(
            matches!(
                again,
                DriverError::Net(NetError::Contract(ContractError::AlreadyRedeemed(_)))
            ),
            "{again:?}"
        );
    }

    #[test]
    fn revocation_blocks_new_grants_and_unredeemed_keys() {
        let tmp = TempDir::new().unwrap();
        let mut driver = driver(&tmp);
        let s1 = enroll_ok(&mut driver, "subj-101", "site1");
        assert!(is_valid_commit(&driver.deidentify(&s1).unwrap()));
        // grant issued while consent holds, revoked before redemption
        let outcome =
            driver.request_access("analyst-1", "primary", std::slice::from_ref(&s1)).unwrap();
        let TxOutcome::Committed { response: Some(grant_json), .. } = &outcome else {
            panic!("expected grant");
        };
        let grant: AnalysisGrant = serde_json::from_str(grant_json).unwrap();
        let revoke = driver.revoke_consent("subj-101", &s1, "primary").unwrap();
        assert!(is_valid_commit(&revoke));
        let redeem = driver.redeem_key("analyst-1", &grant.grant_id).unwrap_err();
        assert!(
            matches!(
                redeem,
                DriverError::Net(NetError::Contract(ContractError::RevokedGrant(_)))
            ),
            "{redeem:?}"
        );
        // and new requests for the revoked scope are refused
        let request =
            driver.request_access("analyst-1", "primary", std::slice::from_ref(&s1)).unwrap();
        let TxOutcome::Rejected { entry, .. } = &request else {
            panic!("expected rejection, got {request:?}");
        };
        assert_eq!(entry.code, ViolationCode::MissingConsent);
        // the untouched scope still works
        let other = driver.request_access("analyst-1", "secondary_analysis", &[s1]).unwrap();
        assert!(is_valid_commit(&other));
    }

    #[test]
    fn subject_ae_report_is_mirrored_and_followed_up() {
        let tmp = TempDir::new().unwrap();
        let mut driver = driver(&tmp);
        let s1 = enroll_ok(&mut driver, "subj-101", "site1");
        let ae = driver
            .report_ae("subj-101", &s1, "Serious", "fainted during infusion")
            .unwrap();
        assert!(is_valid_commit(ae.intake.as_ref().unwrap()));
        let report = ae.report.unwrap();
        let TxOutcome::Committed { response: Some(ae_id), .. } = &report else {
            panic!("expected mirrored report, got {report:?}");
        };
        assert_eq!(ae_id, "AE-0001");
        // serious events notify oversight
        assert!(driver
            .net
            .read_channel("dsmb-1", "monitoring", &format!("notify/{ae_id}"))
            .unwrap()
            .is_some());
        // follow up past the due day: state updates but a violation logs
        driver.net.advance_day(20);
        assert!(is_valid_commit(&driver.update_ae("dsmb-1", ae_id, "UnderReview").unwrap()));
        let update = driver.update_ae("dsmb-1", ae_id, "FollowedUp").unwrap();
        assert!(is_valid_commit(&update));
        let (value, _) = driver
            .net
            .read_channel("dsmb-1", "monitoring", &crate::contracts::monitoring::ae_key(ae_id))
            .unwrap()
            .unwrap();
        let record: serde_json::Value = serde_json::from_slice(&value).unwrap();
        assert_eq!(record["status"], serde_json::json!(AeStatus::FollowedUp));
        let violations = driver.net.scan_channel("dsmb-1", "monitoring", "violation/").unwrap();
        assert_eq!(violations.len(), 1);
        let entry: crate::records::ViolationEntry =
            serde_json::from_slice(&violations[0].1).unwrap();
        assert_eq!(entry.code, ViolationCode::OverdueFollowup);
    }

    #[test]
    fn amendment_widens_the_visit_window() {
        let tmp = TempDir::new().unwrap();
        let mut driver = driver(&tmp);
        let s1 = enroll_ok(&mut driver, "subj-101", "site1");
        let baseline = VisitRecord {
            subject_id: s1.clone(),
            visit_id: "baseline".to_string(),
            performed_day: 0,
            activities: vec![ActivityEntry {
                code: "sample_A".to_string(),
                coded_value: Some("123456".to_string()),
                payload_digest: None,
            }],
            entered_by: String::new(),
        };
        assert!(is_valid_commit(&driver.record_visit("pi-site1", &baseline).unwrap()));
        driver.net.advance_day(38);
        let week4 = VisitRecord {
            subject_id: s1.clone(),
            visit_id: "week4".to_string(),
            performed_day: 38,
            activities: vec![ActivityEntry {
                code: "lab_B".to_string(),
                coded_value: Some("654321".to_string()),
                payload_digest: None,
            }],
            entered_by: String::new(),
        };
        let before = driver.record_visit("pi-site1", &week4).unwrap();
        let TxOutcome::Rejected { entry, .. } = &before else {
            panic!("day 38 outside [21, 35], got {before:?}");
        };
        assert_eq!(entry.code, ViolationCode::OutOfWindow);

        // widen week4's late window from +7 to +10 and resubmit
        let mut schedule =
            driver.net.current_rules("monitoring").unwrap().1.protocol.schedule.clone();
        schedule.visits[1].window_plus = 10;
        let fragment = ProtocolFragment {
            eligibility: None,
            schedule: Some(schedule),
            consent_scopes: None,
        };
        let approvers: Vec<String> = ["irb-1", "pi-site1", "pi-site2", "cc-1", "dsmb-1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        driver.amend("monitoring", &fragment, "1.1", &approvers).unwrap();
        let after = driver.record_visit("pi-site1", &week4).unwrap();
        assert!(is_valid_commit(&after), "{after:?}");
        // the rejection is still on the ledger after the amendment
        let violations = driver.net.scan_channel("dsmb-1", "monitoring", "violation/").unwrap();
        assert_eq!(violations.len(), 1);
        // other channels keep their original contract version
        assert_eq!(driver.net.current_rules("enrollment").unwrap().0.version, "1.0");
        assert_eq!(driver.net.current_rules("monitoring").unwrap().0.version, "1.1");
    }
}
