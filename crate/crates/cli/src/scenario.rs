//! Scenario scripts: a named list of events played against a fresh
//! network. Each event yields one outcome record; optional `expect`
//! fields turn a script into an executable check.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trialmesh_core::audit;
use trialmesh_core::ledger::ValidityFlag;
use trialmesh_core::network::{TxOutcome, ORDERER_ID};
use trialmesh_core::protocol::{AttrValue, ProtocolFragment};
use trialmesh_core::records::{ActivityEntry, VisitRecord};
use trialmesh_core::trial::TrialDriver;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub events: Vec<Event>,
}

/// What an event is expected to produce. `valid` means committed and
/// marked valid, `rejected` covers rule violations and validation
/// flags, `error` means the call itself must fail hard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expect {
    Valid,
    Rejected,
    Error,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ActivitySpec {
    pub code: String,
    #[serde(default)]
    pub value: Option<String>,
    #[serde(default)]
    pub digest: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Event {
    Enroll {
        site: String,
        ident: String,
        attrs: BTreeMap<String, AttrValue>,
        scopes: Vec<String>,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Deidentify {
        subject: String,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Visit {
        entered_by: String,
        subject: String,
        visit: String,
        day: u64,
        activities: Vec<ActivitySpec>,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Ae {
        reporter: String,
        subject: String,
        severity: String,
        description: String,
        #[serde(default)]
        expect: Option<Expect>,
    },
    AeUpdate {
        actor: String,
        ae: String,
        status: String,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Grant {
        analyst: String,
        scope: String,
        subjects: Vec<String>,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Redeem {
        analyst: String,
        grant: String,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Export {
        analyst: String,
        grant: String,
        #[serde(default)]
        expect: Option<Expect>,
    },
    RevokeConsent {
        actor: String,
        subject: String,
        scope: String,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Amend {
        channel: String,
        version: String,
        fragment: ProtocolFragment,
        approvers: Vec<String>,
        #[serde(default)]
        expect: Option<Expect>,
    },
    FileReport {
        filed_by: String,
        from: u64,
        to: u64,
        body: String,
        #[serde(default)]
        expect: Option<Expect>,
    },
    AdvanceDay {
        days: u64,
    },
    Crash {
        node: String,
    },
    Recover {
        node: String,
    },
    Report {
        requester: String,
        from: u64,
        to: u64,
    },
}

impl Event {
    pub fn op_name(&self) -> &'static str {
        match self {
            Event::Enroll { .. } => "enroll",
            Event::Deidentify { .. } => "deidentify",
            Event::Visit { .. } => "visit",
            Event::Ae { .. } => "ae",
            Event::AeUpdate { .. } => "ae_update",
            Event::Grant { .. } => "grant",
            Event::Redeem { .. } => "redeem",
            Event::Export { .. } => "export",
            Event::RevokeConsent { .. } => "revoke_consent",
            Event::Amend { .. } => "amend",
            Event::FileReport { .. } => "file_report",
            Event::AdvanceDay { .. } => "advance_day",
            Event::Crash { .. } => "crash",
            Event::Recover { .. } => "recover",
            Event::Report { .. } => "report",
        }
    }

    fn expectation(&self) -> Option<Expect> {
        match self {
            Event::Enroll { expect, .. }
            | Event::Deidentify { expect, .. }
            | Event::Visit { expect, .. }
            | Event::Ae { expect, .. }
            | Event::AeUpdate { expect, .. }
            | Event::Grant { expect, .. }
            | Event::Redeem { expect, .. }
            | Event::Export { expect, .. }
            | Event::RevokeConsent { expect, .. }
            | Event::Amend { expect, .. }
            | Event::FileReport { expect, .. } => *expect,
            Event::AdvanceDay { .. }
            | Event::Crash { .. }
            | Event::Recover { .. }
            | Event::Report { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Observed {
    Valid,
    Rejected,
    Error,
    Ok,
}

impl Observed {
    fn label(self) -> &'static str {
        match self {
            Observed::Valid => "valid",
            Observed::Rejected => "rejected",
            Observed::Error => "error",
            Observed::Ok => "ok",
        }
    }

    fn matches(self, expect: Expect) -> bool {
        matches!(
            (self, expect),
            (Observed::Valid, Expect::Valid)
                | (Observed::Rejected, Expect::Rejected)
                | (Observed::Error, Expect::Error)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub index: usize,
    pub op: String,
    pub outcome: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub events: Vec<EventRecord>,
    pub mismatches: u64,
    pub final_day: u64,
    pub head_hashes: BTreeMap<String, String>,
    pub violations: BTreeMap<String, u64>,
}

fn flag_label(flag: ValidityFlag) -> &'static str {
    match flag {
        ValidityFlag::Valid => "Valid",
        ValidityFlag::InvalidEndorsement => "InvalidEndorsement",
        ValidityFlag::InvalidVersionConflict => "InvalidVersionConflict",
        ValidityFlag::InvalidContractRule => "InvalidContractRule",
    }
}

fn classify(outcome: &TxOutcome) -> (Observed, String) {
    match outcome {
        TxOutcome::Committed { validity: ValidityFlag::Valid, response, tx_id, .. } => {
            (Observed::Valid, response.clone().unwrap_or_else(|| tx_id.clone()))
        }
        TxOutcome::Committed { validity, tx_id, .. } => {
            (Observed::Rejected, format!("{tx_id} flagged {}", flag_label(*validity)))
        }
        TxOutcome::Rejected { entry, .. } => {
            (Observed::Rejected, format!("{}: {}", entry.code.as_str(), entry.detail))
        }
    }
}

/// One-time grant keys must never leak into operator artifacts, so
/// redeem reports a fixed detail instead of the contract response.
fn classify_redeem(outcome: &TxOutcome) -> (Observed, String) {
    match classify(outcome) {
        (Observed::Valid, _) => (Observed::Valid, "key released".to_string()),
        other => other,
    }
}

fn grant_detail(outcome: &TxOutcome) -> (Observed, String) {
    let (observed, detail) = classify(outcome);
    if observed != Observed::Valid {
        return (observed, detail);
    }
    let grant_id = serde_json::from_str::<serde_json::Value>(&detail)
        .ok()
        .and_then(|v| v.get("grant_id").and_then(|g| g.as_str()).map(str::to_string));
    match grant_id {
        Some(id) => (Observed::Valid, id),
        None => (Observed::Valid, detail),
    }
}

/// Plays every event in order, never stopping early: later events are
/// allowed to depend on earlier failures (that is how rejection paths
/// get exercised). Returns the summary; the caller decides the exit
/// code from `mismatches`.
pub fn run_scenario(
    driver: &mut TrialDriver,
    scenario: &Scenario,
    out_dir: &Path,
) -> Result<RunSummary, CliError> {
    let mut records = Vec::with_capacity(scenario.events.len());
    let mut mismatches = 0u64;

    for (index, event) in scenario.events.iter().enumerate() {
        let (observed, detail) = play(driver, event, out_dir)?;
        let expected = event.expectation();
        let matched = match expected {
            Some(e) => Some(observed.matches(e)),
            // a hard error nobody asked for always counts against the run
            None if observed == Observed::Error => Some(false),
            None => None,
        };
        if matched == Some(false) {
            mismatches += 1;
        }
        records.push(EventRecord {
            index,
            op: event.op_name().to_string(),
            outcome: observed.label().to_string(),
            detail,
            expected: expected.map(|e| {
                match e {
                    Expect::Valid => "valid",
                    Expect::Rejected => "rejected",
                    Expect::Error => "error",
                }
                .to_string()
            }),
            matched,
        });
    }

    let mut head_hashes = BTreeMap::new();
    let mut ledgers = BTreeMap::new();
    for channel_id in driver.net.channel_ids() {
        let ledger = driver.net.node_ledger(ORDERER_ID, &channel_id)?;
        head_hashes.insert(channel_id.clone(), hex::encode(ledger.head_hash()));
        ledgers.insert(channel_id, ledger);
    }
    let violations = audit::from_ledgers(&ledgers, 0, u64::MAX).totals.violations;

    Ok(RunSummary {
        scenario: scenario.name.clone(),
        events: records,
        mismatches,
        final_day: driver.net.day,
        head_hashes,
        violations,
    })
}

fn play(
    driver: &mut TrialDriver,
    event: &Event,
    out_dir: &Path,
) -> Result<(Observed, String), CliError> {
    let outcome = match event {
        Event::Enroll { site, ident, attrs, scopes, .. } => {
            match driver.enroll(site, ident, attrs, scopes) {
                Ok(o) => classify(&o),
                Err(e) => (Observed::Error, e.to_string()),
            }
        }
        Event::Deidentify { subject, .. } => match driver.deidentify(subject) {
            Ok(o) => classify(&o),
            Err(e) => (Observed::Error, e.to_string()),
        },
        Event::Visit { entered_by, subject, visit, day, activities, .. } => {
            let record = VisitRecord {
                subject_id: subject.clone(),
                visit_id: visit.clone(),
                performed_day: *day,
                activities: activities
                    .iter()
                    .map(|a| ActivityEntry {
                        code: a.code.clone(),
                        coded_value: a.value.clone(),
                        payload_digest: a.digest.clone(),
                    })
                    .collect(),
                // the contract stamps the committed record with the invoker
                entered_by: String::new(),
            };
            match driver.record_visit(entered_by, &record) {
                Ok(o) => classify(&o),
                Err(e) => (Observed::Error, e.to_string()),
            }
        }
        Event::Ae { reporter, subject, severity, description, .. } => {
            match driver.report_ae(reporter, subject, severity, description) {
                Ok(ae) => match ae.report.or(ae.intake) {
                    Some(o) => classify(&o),
                    None => (Observed::Error, "no outcome recorded".to_string()),
                },
                Err(e) => (Observed::Error, e.to_string()),
            }
        }
        Event::AeUpdate { actor, ae, status, .. } => match driver.update_ae(actor, ae, status) {
            Ok(o) => classify(&o),
            Err(e) => (Observed::Error, e.to_string()),
        },
        Event::Grant { analyst, scope, subjects, .. } => {
            match driver.request_access(analyst, scope, subjects) {
                Ok(o) => grant_detail(&o),
                Err(e) => (Observed::Error, e.to_string()),
            }
        }
        Event::Redeem { analyst, grant, .. } => match driver.redeem_key(analyst, grant) {
            Ok(o) => classify_redeem(&o),
            Err(e) => (Observed::Error, e.to_string()),
        },
        Event::Export { analyst, grant, .. } => match driver.export_csv(analyst, grant) {
            Ok(export) => match export.csv {
                Some(csv) => (Observed::Valid, csv),
                None => classify(&export.outcome),
            },
            Err(e) => (Observed::Error, e.to_string()),
        },
        Event::RevokeConsent { actor, subject, scope, .. } => {
            match driver.revoke_consent(actor, subject, scope) {
                Ok(o) => classify(&o),
                Err(e) => (Observed::Error, e.to_string()),
            }
        }
        Event::Amend { channel, version, fragment, approvers, .. } => {
            match driver.amend(channel, fragment, version, approvers) {
                Ok(()) => (Observed::Valid, format!("{channel} upgraded to v{version}")),
                Err(e) => (Observed::Error, e.to_string()),
            }
        }
        Event::FileReport { filed_by, from, to, body, .. } => {
            let digest = hex::encode(Sha256::digest(body.as_bytes()));
            match driver.file_report(filed_by, *from, *to, &digest) {
                Ok(o) => classify(&o),
                Err(e) => (Observed::Error, e.to_string()),
            }
        }
        Event::AdvanceDay { days } => {
            let day = driver.net.advance_day(*days);
            (Observed::Ok, format!("day {day}"))
        }
        Event::Crash { node } => match driver.net.crash_node(node) {
            Ok(()) => (Observed::Ok, format!("{node} down")),
            Err(e) => (Observed::Error, e.to_string()),
        },
        Event::Recover { node } => match driver.net.recover_node(node) {
            Ok(()) => (Observed::Ok, format!("{node} up")),
            Err(e) => (Observed::Error, e.to_string()),
        },
        Event::Report { requester, from, to } => {
            match audit::network_report(&driver.net, requester, ORDERER_ID, *from, *to) {
                Ok(report) => {
                    let name = format!("report-{from}-{to}.json");
                    fs::write(out_dir.join(&name), report.to_json() + "\n")?;
                    (Observed::Ok, name)
                }
                Err(e) => (Observed::Error, e.to_string()),
            }
        }
    };
    Ok(outcome)
}
