//! Cross-channel audit reports.
//!
//! A report is a pure fold over committed blocks, never over mutable
//! state, so two honest peers holding the same channels produce
//! byte-identical JSON for the same day range. Every record filters on
//! its own day field (enrollment day, visit day, violation day), not on
//! block arrival order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::identity::Role;
use crate::ledger::{Ledger, Transaction, ValidityFlag};
use crate::network::{NetError, Network, SYSTEM_CHANNEL};
use crate::records::{AdverseEventReport, SubjectRecord, ViolationCode, ViolationEntry, VisitRecord};

/// Counter block for one site. The same shape carries the global
/// totals, where events that cannot be pinned to a site still count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteSection {
    pub enrollments: u64,
    pub visits_accepted: u64,
    pub visits_flagged: BTreeMap<String, u64>,
    pub ae_by_severity: BTreeMap<String, u64>,
    pub ae_by_status: BTreeMap<String, u64>,
    pub overdue_followups: u64,
    pub violations: BTreeMap<String, u64>,
}

/// Study-wide audit summary over an inclusive day range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub day_from: u64,
    pub day_to: u64,
    pub channels: Vec<String>,
    pub sites: BTreeMap<String, SiteSection>,
    pub totals: SiteSection,
    pub contract_versions: BTreeMap<String, Vec<String>>,
    pub head_hashes: BTreeMap<String, String>,
}

impl StudyReport {
    /// Canonical rendering. Maps are ordered, so equal reports render
    /// to equal bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn each_section(&mut self, site: Option<&str>, f: impl Fn(&mut SiteSection)) {
        f(&mut self.totals);
        if let Some(site) = site {
            f(self.sites.entry(site.to_string()).or_default());
        }
    }
}

fn flags_a_visit(code: ViolationCode) -> bool {
    matches!(
        code,
        ViolationCode::OutOfWindow | ViolationCode::MissingPrereq | ViolationCode::BadCodeFormat
    )
}

/// Pins a transaction to a site through its function arguments. Events
/// with no site-bearing argument (lifecycle records, tamper logs,
/// analysis grants) return None and count in the totals only.
fn tx_site(
    tx: &Transaction,
    subject_site: &BTreeMap<String, String>,
    ae_subject: &BTreeMap<String, String>,
) -> Option<String> {
    let arg = |i: usize| tx.args.get(i).map(String::as_str);
    match tx.function.as_str() {
        "enroll_subject" => arg(2).map(str::to_string),
        "record_visit" => arg(0)
            .and_then(|json| serde_json::from_str::<VisitRecord>(json).ok())
            .and_then(|v| subject_site.get(&v.subject_id).cloned()),
        "report_ae" | "report_ae_intake" => arg(0).and_then(|s| subject_site.get(s).cloned()),
        "update_ae" => arg(0)
            .and_then(|ae| ae_subject.get(ae))
            .and_then(|s| subject_site.get(s).cloned()),
        "sync_subject" => arg(0)
            .and_then(|json| serde_json::from_str::<SubjectRecord>(json).ok())
            .map(|r| r.site_id),
        _ => None,
    }
}

/// Folds a set of channel replicas into one report.
///
/// Violation entries are read from every transaction regardless of its
/// validity flag: a rejected proposal leaves its entry in a valid log
/// transaction, while a stale-version flag rides the invalid
/// transaction itself. All other counters only trust valid writes.
pub fn from_ledgers(
    ledgers: &BTreeMap<String, &Ledger>,
    day_from: u64,
    day_to: u64,
) -> StudyReport {
    let in_range = |day: u64| day >= day_from && day <= day_to;

    // First pass: attribution maps, unfiltered so late events can still
    // point at subjects enrolled before the range opened.
    let mut subject_site: BTreeMap<String, String> = BTreeMap::new();
    let mut ae_subject: BTreeMap<String, String> = BTreeMap::new();
    for ledger in ledgers.values() {
        for block in ledger.blocks() {
            for tx in &block.tx_list {
                if tx.validity != ValidityFlag::Valid {
                    continue;
                }
                for (key, op) in &tx.write_set {
                    let Some(value) = op.value() else { continue };
                    if key.starts_with("subject/") {
                        if let Ok(rec) = serde_json::from_slice::<SubjectRecord>(value) {
                            subject_site.insert(rec.subject_id, rec.site_id);
                        }
                    } else if key.starts_with("ae/") {
                        if let Ok(rec) = serde_json::from_slice::<AdverseEventReport>(value) {
                            ae_subject.insert(rec.ae_id, rec.subject_id);
                        }
                    }
                }
            }
        }
    }

    let mut report = StudyReport {
        day_from,
        day_to,
        channels: ledgers.keys().cloned().collect(),
        sites: BTreeMap::new(),
        totals: SiteSection::default(),
        contract_versions: BTreeMap::new(),
        head_hashes: ledgers
            .iter()
            .map(|(id, ledger)| (id.clone(), hex::encode(ledger.head_hash())))
            .collect(),
    };

    // Subjects are projected onto several channels; count each once.
    let mut seen_subjects: BTreeSet<String> = BTreeSet::new();
    let mut seen_aes: BTreeSet<String> = BTreeSet::new();
    // In-range adverse events carry their site attribution forward so
    // the closing status tally lands on the right row.
    let mut ae_final: BTreeMap<String, (Option<String>, String)> = BTreeMap::new();

    for (channel_id, ledger) in ledgers {
        for block in ledger.blocks() {
            for tx in &block.tx_list {
                let site = tx_site(tx, &subject_site, &ae_subject);
                for (key, op) in &tx.write_set {
                    let Some(value) = op.value() else { continue };
                    if key.starts_with("violation/") {
                        let Ok(entry) = serde_json::from_slice::<ViolationEntry>(value) else {
                            continue;
                        };
                        if !in_range(entry.day) {
                            continue;
                        }
                        let code = entry.code.as_str();
                        report.each_section(site.as_deref(), |s| {
                            *s.violations.entry(code.to_string()).or_insert(0) += 1;
                            if flags_a_visit(entry.code) {
                                *s.visits_flagged.entry(code.to_string()).or_insert(0) += 1;
                            }
                            if entry.code == ViolationCode::OverdueFollowup {
                                s.overdue_followups += 1;
                            }
                        });
                        continue;
                    }
                    if tx.validity != ValidityFlag::Valid {
                        continue;
                    }
                    if key.starts_with("subject/") {
                        let Ok(rec) = serde_json::from_slice::<SubjectRecord>(value) else {
                            continue;
                        };
                        if seen_subjects.insert(rec.subject_id.clone()) && in_range(rec.enrolled_at)
                        {
                            report.each_section(Some(&rec.site_id), |s| s.enrollments += 1);
                        }
                    } else if key.starts_with("visit/") {
                        let Ok(rec) = serde_json::from_slice::<VisitRecord>(value) else {
                            continue;
                        };
                        if in_range(rec.performed_day) {
                            let visit_site = subject_site.get(&rec.subject_id).cloned();
                            report.each_section(visit_site.as_deref(), |s| s.visits_accepted += 1);
                        }
                    } else if key.starts_with("ae/") {
                        let Ok(rec) = serde_json::from_slice::<AdverseEventReport>(value) else {
                            continue;
                        };
                        let ae_site = subject_site.get(&rec.subject_id).cloned();
                        if seen_aes.insert(rec.ae_id.clone()) {
                            if in_range(rec.reported_day) {
                                let severity = rec.severity.to_string();
                                report.each_section(ae_site.as_deref(), |s| {
                                    *s.ae_by_severity.entry(severity.clone()).or_insert(0) += 1;
                                });
                                ae_final.insert(rec.ae_id, (ae_site, rec.status.to_string()));
                            }
                        } else if let Some(slot) = ae_final.get_mut(&rec.ae_id) {
                            slot.1 = rec.status.to_string();
                        }
                    } else if *channel_id == SYSTEM_CHANNEL {
                        if let Some(rest) = key.strip_prefix("lifecycle/") {
                            if let Some((name, version)) = rest.rsplit_once('/') {
                                report
                                    .contract_versions
                                    .entry(name.to_string())
                                    .or_default()
                                    .push(version.to_string());
                            }
                        }
                    }
                }
            }
        }
    }

    for (site, status) in ae_final.values() {
        report.each_section(site.as_deref(), |s| {
            *s.ae_by_status.entry(status.clone()).or_insert(0) += 1;
        });
    }

    report
}

/// Builds a report from one peer's replicas. Callers must sit on the
/// report channel or hold the review-board role; the peer contributes
/// whichever channels it replicates.
pub fn network_report(
    net: &Network,
    requester_id: &str,
    peer_id: &str,
    day_from: u64,
    day_to: u64,
) -> Result<StudyReport, NetError> {
    let on_report_channel = net
        .channel_config("report")
        .map(|c| c.is_member(requester_id))
        .unwrap_or(false);
    let reviewer = net
        .msp
        .get(requester_id)
        .map(|i| i.role == Role::Irb && !i.revoked)
        .unwrap_or(false);
    if !on_report_channel && !reviewer {
        return Err(NetError::AccessDenied {
            identity_id: requester_id.to_string(),
            channel_id: "report".to_string(),
        });
    }
    if net.node_status(peer_id).is_none() {
        return Err(NetError::UnknownNode(peer_id.to_string()));
    }
    let mut ledgers = BTreeMap::new();
    for channel_id in net.channel_ids() {
        if let Ok(ledger) = net.node_ledger(peer_id, &channel_id) {
            ledgers.insert(channel_id, ledger);
        }
    }
    Ok(from_ledgers(&ledgers, day_from, day_to))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Role;
    use crate::network::{TxOutcome, ORDERER_ID};
    use crate::protocol::{AttrValue, TrialProtocol};
    use crate::records::{ActivityEntry, VisitRecord};
    use crate::trial::{is_valid_commit, TrialDriver};
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
            ("subj-201", Role::Subject, Some("site2")),
        ]
        .into_iter()
        .map(|(id, role, site)| (id.to_string(), role, site.map(str::to_string)))
        .collect()
    }

    fn full_attrs(name: &str) -> std::collections::BTreeMap<String, AttrValue> {
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

    fn enroll_ok(driver: &mut TrialDriver, ident: &str, site: &str) -> String {
        let scopes = vec!["primary".to_string(), "secondary_analysis".to_string()];
        let outcome =
            driver.enroll(site, ident, &full_attrs(&format!("Person {ident}")), &scopes).unwrap();
        let TxOutcome::Committed { response: Some(subject_id), .. } = outcome else {
            panic!("enrollment did not commit: {outcome:?}");
        };
        subject_id
    }

    fn visit(subject_id: &str, visit_id: &str, day: u64, code: &str, value: &str) -> VisitRecord {
        VisitRecord {
            subject_id: subject_id.to_string(),
            visit_id: visit_id.to_string(),
            performed_day: day,
            activities: vec![ActivityEntry {
                code: code.to_string(),
                coded_value: Some(value.to_string()),
                payload_digest: None,
            }],
            entered_by: String::new(),
        }
    }

    /// Two sites, one accepted visit, one window violation, one serious
    /// adverse event followed up late.
    fn driven(tmp: &TempDir) -> TrialDriver {
        let mut driver =
            TrialDriver::standard(&roster(), tmp.path(), &TrialProtocol::fixture()).unwrap();
        let s1 = enroll_ok(&mut driver, "subj-101", "site1");
        let s2 = enroll_ok(&mut driver, "subj-201", "site2");
        assert!(is_valid_commit(
            &driver.record_visit("pi-site1", &visit(&s1, "baseline", 0, "sample_A", "123456")).unwrap()
        ));
        driver.net.advance_day(10);
        // week4 window is day 21..=35, so day 10 is out of window
        let flagged =
            driver.record_visit("pi-site2", &visit(&s2, "week4", 10, "lab_B", "654321")).unwrap();
        assert!(matches!(flagged, TxOutcome::Rejected { .. }));
        let ae = driver.report_ae("subj-101", &s1, "Serious", "fainted during infusion").unwrap();
        let TxOutcome::Committed { response: Some(ae_id), .. } = ae.report.unwrap() else {
            panic!("mirror did not commit");
        };
        assert!(is_valid_commit(&driver.update_ae("dsmb-1", &ae_id, "UnderReview").unwrap()));
        // due day is 10 + 14; day 40 is late and logs a flag
        driver.net.advance_day(30);
        assert!(is_valid_commit(&driver.update_ae("dsmb-1", &ae_id, "FollowedUp").unwrap()));
        driver
    }

    #[test]
    fn report_counts_attribute_to_sites() {
        let tmp = TempDir::new().unwrap();
        let driver = driven(&tmp);
        let report = network_report(&driver.net, "sponsor-1", "pi-site1", 0, 60).unwrap();

        assert_eq!(report.totals.enrollments, 2);
        assert_eq!(report.sites["site1"].enrollments, 1);
        assert_eq!(report.sites["site2"].enrollments, 1);

        assert_eq!(report.totals.visits_accepted, 1);
        assert_eq!(report.sites["site1"].visits_accepted, 1);

        assert_eq!(report.totals.violations["OUT_OF_WINDOW"], 1);
        assert_eq!(report.sites["site2"].violations["OUT_OF_WINDOW"], 1);
        assert_eq!(report.sites["site2"].visits_flagged["OUT_OF_WINDOW"], 1);

        assert_eq!(report.totals.ae_by_severity["Serious"], 1);
        assert_eq!(report.sites["site1"].ae_by_severity["Serious"], 1);
        assert_eq!(report.totals.ae_by_status["FollowedUp"], 1);
        assert_eq!(report.totals.overdue_followups, 1);
        assert_eq!(report.sites["site1"].overdue_followups, 1);
        assert_eq!(report.sites["site1"].violations["OVERDUE_FOLLOWUP"], 1);

        for name in ["enrollment", "monitoring", "analysis", "report"] {
            assert_eq!(report.contract_versions[name], vec!["1.0".to_string()]);
        }
        assert!(report.channels.contains(&"system".to_string()));
        assert_eq!(report.head_hashes.len(), report.channels.len());
    }

    #[test]
    fn report_filters_by_day_range() {
        let tmp = TempDir::new().unwrap();
        let driver = driven(&tmp);
        let early = network_report(&driver.net, "sponsor-1", "pi-site1", 0, 9).unwrap();
        assert_eq!(early.totals.enrollments, 2);
        assert_eq!(early.totals.visits_accepted, 1);
        assert!(early.totals.violations.is_empty());
        assert!(early.totals.ae_by_severity.is_empty());

        let late = network_report(&driver.net, "sponsor-1", "pi-site1", 10, 60).unwrap();
        assert_eq!(late.totals.enrollments, 0);
        assert_eq!(late.totals.visits_accepted, 0);
        assert_eq!(late.totals.violations["OUT_OF_WINDOW"], 1);
        assert_eq!(late.totals.ae_by_severity["Serious"], 1);
        assert_eq!(late.totals.ae_by_status["FollowedUp"], 1);
    }

    #[test]
    fn report_is_byte_identical_across_peers() {
        let tmp = TempDir::new().unwrap();
        let driver = driven(&tmp);
        let a = network_report(&driver.net, "irb-1", "pi-site1", 0, 60).unwrap().to_json();
        let b = network_report(&driver.net, "irb-1", "pi-site2", 0, 60).unwrap().to_json();
        let c = network_report(&driver.net, "irb-1", ORDERER_ID, 0, 60).unwrap().to_json();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn report_access_is_gated() {
        let tmp = TempDir::new().unwrap();
        let driver = driven(&tmp);
        // sponsor sits on the report channel, the review board passes by
        // role, the analyst holds neither
        assert!(network_report(&driver.net, "sponsor-1", "pi-site1", 0, 60).is_ok());
        assert!(network_report(&driver.net, "irb-1", "pi-site1", 0, 60).is_ok());
        let err = network_report(&driver.net, "analyst-1", "pi-site1", 0, 60).unwrap_err();
        assert!(matches!(err, NetError::AccessDenied { .. }));
        let err = network_report(&driver.net, "sponsor-1", "nobody", 0, 60).unwrap_err();
        assert!(matches!(err, NetError::UnknownNode(_)));
    }
}
