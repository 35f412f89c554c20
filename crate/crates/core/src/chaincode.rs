//! Deterministic contract runtime and lifecycle registry.
//!
//! Contracts are configured rule interpreters, never arbitrary code: a
//! `RuleSet` pairs a contract kind with the trial protocol it enforces.
//! Execution is a pure function of (committed state, invocation context);
//! all reads and writes flow through [`TxSim`], which records the read set
//! with versions and buffers the write set, so any two peers simulating
//! the same proposal produce identical results.
//!
//! The registry also implements the system chaincode: install, upgrade
//! (gated by the amendment policy), and version history.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, Encoder, Hash32};
use crate::identity::{Identity, Msp, Role, Signature};
use crate::ledger::{Ledger, RwSet, Version, WriteOp};
use crate::offchain::BlobStore;
use crate::protocol::TrialProtocol;
use crate::records::{ViolationCode, ViolationEntry};

/// The five contract families. Four govern the trial channels; `Bench`
/// is a minimal read-modify-write contract for throughput measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractKind {
    Enrollment,
    Monitoring,
    Analysis,
    Report,
    Bench,
}

/// A contract's configured rules. The digest of the canonical JSON bytes
/// identifies the rule set in lifecycle records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub kind: ContractKind,
    pub protocol: TrialProtocol,
}

impl RuleSet {
    pub fn digest(&self) -> Hash32 {
        sha256(serde_json::to_string(self).unwrap().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractDescriptor {
    pub name: String,
    pub version: String,
    pub rule_set_digest_hex: String,
    pub installed_at: u64,
}

/// Parse a dotted-integer version string such as "1.0" or "2.10.3".
pub fn parse_version(v: &str) -> Result<Vec<u64>, ContractError> {
    if v.is_empty() {
        return Err(ContractError::BadVersion(v.to_string()));
    }
    v.split('.')
        .map(|part| part.parse::<u64>().map_err(|_| ContractError::BadVersion(v.to_string())))
        .collect()
}

pub fn version_gt(a: &str, b: &str) -> Result<bool, ContractError> {
    Ok(parse_version(a)? > parse_version(b)?)
}

/// A rule violation detected during simulation. The runtime converts it
/// into exactly one `ViolationEntry` in the transaction's write set.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleViolation {
    pub code: ViolationCode,
    pub detail: String,
}

impl RuleViolation {
    pub fn new(code: ViolationCode, detail: impl Into<String>) -> Self {
        RuleViolation { code, detail: detail.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ContractError {
    #[error("contract rule violation: {} ({})", .0.code, .0.detail)]
    Violation(RuleViolation),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("unknown subject '{0}'")]
    UnknownSubject(String),
    #[error("subject '{0}' is not enrolled")]
    NotEnrolled(String),
    #[error("unknown visit '{0}'")]
    UnknownVisit(String),
    #[error("unknown adverse event '{0}'")]
    UnknownAe(String),
    #[error("illegal adverse-event transition {from} -> {to}")]
    IllegalTransition { from: String, to: String },
    #[error("unknown grant '{0}'")]
    UnknownGrant(String),
    #[error("grant '{0}' already redeemed")]
    AlreadyRedeemed(String),
    #[error("grant '{0}' revoked")]
    RevokedGrant(String),
    #[error("key token does not match grant '{0}'")]
    BadToken(String),
    #[error("bad version string '{0}'")]
    BadVersion(String),
    #[error("blob store: {0}")]
    Blob(#[from] crate::offchain::BlobError),
    #[error("malformed state value: {0}")]
    Codec(#[from] serde_json::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum LifecycleError {
    #[error("contract '{name}' version {version} already installed")]
    DuplicateVersion { name: String, version: String },
    #[error("unknown channel '{0}'")]
    UnknownChannel(String),
    #[error("insufficient approvals: {0}")]
    InsufficientApprovals(String),
    #[error("version {to} does not increase over {from}")]
    NonMonotoneVersion { from: String, to: String },
    #[error(transparent)]
    BadVersion(#[from] ContractError),
}

/// Everything a contract invocation may observe besides channel state.
pub struct InvocationContext<'a> {
    pub invoker: &'a Identity,
    pub channel_id: &'a str,
    pub function: &'a str,
    pub args: &'a [String],
    pub day: u64,
    pub blobs: &'a BlobStore,
}

impl InvocationContext<'_> {
    pub fn arg(&self, i: usize) -> Result<&str, ContractError> {
        self.args
            .get(i)
            .map(|s| s.as_str())
            .ok_or_else(|| ContractError::BadArgs(format!("missing argument {i}")))
    }

    pub fn require_role(&self, allowed: &[Role]) -> Result<(), ContractError> {
        if allowed.contains(&self.invoker.role) {
            Ok(())
        } else {
            Err(ContractError::Violation(RuleViolation::new(
                ViolationCode::UnauthorizedRole,
                format!("{} may not call {}", self.invoker.role, self.function),
            )))
        }
    }
}

/// Read access to committed channel state. Implemented by [`Ledger`];
/// the simulator is generic so tests can drive it with fixtures.
pub trait StateReader {
    fn get(&self, key: &str) -> Option<(Vec<u8>, Version)>;
    fn scan_prefix(&self, prefix: &str) -> Vec<(String, Vec<u8>, Version)>;
}

impl StateReader for Ledger {
    fn get(&self, key: &str) -> Option<(Vec<u8>, Version)> {
        self.get_state(key).map(|(v, ver)| (v.to_vec(), ver))
    }

    fn scan_prefix(&self, prefix: &str) -> Vec<(String, Vec<u8>, Version)> {
        self.scan_prefix(prefix)
            .into_iter()
            .map(|(k, v)| {
                let ver = self.get_state(&k).map(|(_, ver)| ver).unwrap();
                (k, v, ver)
            })
            .collect()
    }
}

/// Transaction simulator: records reads against committed state and
/// buffers writes. Reads of keys this simulation already wrote observe
/// the pending write and record no state read.
pub struct TxSim<'a> {
    reader: &'a dyn StateReader,
    reads: BTreeMap<String, Version>,
    writes: BTreeMap<String, WriteOp>,
}

impl<'a> TxSim<'a> {
    pub fn new(reader: &'a dyn StateReader) -> Self {
        TxSim { reader, reads: BTreeMap::new(), writes: BTreeMap::new() }
    }

    pub fn get(&mut self, key: &str) -> Option<Vec<u8>> {
        if let Some(op) = self.writes.get(key) {
            return op.value().map(|v| v.to_vec());
        }
        match self.reader.get(key) {
            Some((value, version)) => {
                self.reads.entry(key.to_string()).or_insert(version);
                Some(value)
            }
            None => {
                self.reads.entry(key.to_string()).or_insert(Version::ABSENT);
                None
            }
        }
    }

    pub fn get_json<T: serde::de::DeserializeOwned>(
        &mut self,
        key: &str,
    ) -> Result<Option<T>, ContractError> {
        match self.get(key) {
            Some(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            None => Ok(None),
        }
    }

    pub fn put(&mut self, key: &str, value: Vec<u8>) {
        self.writes.insert(key.to_string(), WriteOp::Put(value));
    }

    pub fn put_json<T: Serialize>(&mut self, key: &str, value: &T) {
        self.put(key, serde_json::to_vec(value).unwrap());
    }

    pub fn delete(&mut self, key: &str) {
        self.writes.insert(key.to_string(), WriteOp::Delete);
    }

    /// Committed entries under `prefix`, overlaid with pending writes.
    /// Every committed key touched is recorded in the read set.
    pub fn scan(&mut self, prefix: &str) -> Vec<(String, Vec<u8>)> {
        let mut merged: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for (key, value, version) in self.reader.scan_prefix(prefix) {
            self.reads.entry(key.clone()).or_insert(version);
            merged.insert(key, value);
        }
        for (key, op) in self.writes.range(prefix.to_string()..) {
            if !key.starts_with(prefix) {
                break;
            }
            match op {
                WriteOp::Put(v) => {
                    merged.insert(key.clone(), v.clone());
                }
                WriteOp::Delete => {
                    merged.remove(key);
                }
            }
        }
        merged.into_iter().collect()
    }

    /// Write the single audit entry for a violation flagged inside an
    /// otherwise valid transaction (tx_id empty = the enclosing one).
    pub fn log_violation(&mut self, ctx: &InvocationContext, code: ViolationCode, detail: &str) {
        let entry = build_violation(ctx, code, detail);
        self.put_json(&violation_key(ctx, code, detail), &entry);
    }

    pub fn finish(self) -> RwSet {
        (self.reads.into_iter().collect(), self.writes.into_iter().collect())
    }
}

fn build_violation(ctx: &InvocationContext, code: ViolationCode, detail: &str) -> ViolationEntry {
    ViolationEntry {
        code,
        channel_id: ctx.channel_id.to_string(),
        tx_id: String::new(),
        detail: detail.to_string(),
        day: ctx.day,
    }
}

/// Deterministic state key for a violation entry, unique per (proposal
/// shape, code, detail, day).
fn violation_key(ctx: &InvocationContext, code: ViolationCode, detail: &str) -> String {
    let mut enc = Encoder::new();
    enc.put_str(ctx.channel_id);
    enc.put_str(ctx.function);
    enc.put_count(ctx.args.len());
    for a in ctx.args {
        enc.put_str(a);
    }
    enc.put_str(&ctx.invoker.id);
    enc.put_u64(ctx.day);
    enc.put_str(code.as_str());
    enc.put_str(detail);
    let digest = sha256(&enc.finish());
    format!("violation/{}/{}", &hex::encode(digest)[0..16], ctx.day)
}

/// Outcome of a simulation: the recorded read/write sets, an optional
/// client-visible response, and the violation if the rules rejected the
/// proposal (in which case the write set is exactly the audit entry).
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub read_set: Vec<(String, Version)>,
    pub write_set: Vec<(String, WriteOp)>,
    pub response: Option<String>,
    pub violation: Option<ViolationEntry>,
}

/// Execute a contract function against committed state. Rule violations
/// are converted into a `SimResult` whose write set holds the single
/// violation entry; hard errors (malformed args, unknown ids) propagate.
pub fn invoke(
    rules: &RuleSet,
    ctx: &InvocationContext,
    reader: &dyn StateReader,
) -> Result<SimResult, ContractError> {
    let mut sim = TxSim::new(reader);
    match crate::contracts::dispatch(rules, ctx, &mut sim) {
        Ok(response) => {
            let (read_set, write_set) = sim.finish();
            Ok(SimResult { read_set, write_set, response, violation: None })
        }
        Err(ContractError::Violation(v)) => {
            let (read_set, _) = sim.finish();
            let entry = build_violation(ctx, v.code, &v.detail);
            let key = violation_key(ctx, v.code, &v.detail);
            let write_set = vec![(key, WriteOp::Put(serde_json::to_vec(&entry).unwrap()))];
            Ok(SimResult { read_set, write_set, response: None, violation: Some(entry) })
        }
        Err(e) => Err(e),
    }
}

/// Canonical byte string an approver signs to endorse a contract upgrade.
pub fn approval_message(channel_id: &str, name: &str, version: &str, rules_digest: &Hash32) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.put_str("contract-upgrade");
    enc.put_str(channel_id);
    enc.put_str(name);
    enc.put_str(version);
    enc.put_raw(rules_digest);
    enc.finish()
}

struct Installed {
    descriptor: ContractDescriptor,
    rules: RuleSet,
}

/// System chaincode state: which contract (at which version) every
/// channel runs, plus the complete lifecycle history per contract name.
/// Shared by all peers; a channel's version switch is atomic by
/// construction.
#[derive(Default)]
pub struct ContractRegistry {
    channels: BTreeMap<String, Installed>,
    history: BTreeMap<String, Vec<ContractDescriptor>>,
}

impl ContractRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Channels must be announced before contracts can bind to them.
    pub fn register_channel(&mut self, channel_id: &str) {
        self.channels.entry(channel_id.to_string()).or_insert_with(|| Installed {
            descriptor: ContractDescriptor {
                name: String::new(),
                version: String::new(),
                rule_set_digest_hex: String::new(),
                installed_at: 0,
            },
            rules: RuleSet { kind: ContractKind::Bench, protocol: TrialProtocol::fixture() },
        });
    }

    fn slot(&mut self, channel_id: &str) -> Result<&mut Installed, LifecycleError> {
        self.channels
            .get_mut(channel_id)
            .ok_or_else(|| LifecycleError::UnknownChannel(channel_id.to_string()))
    }

    pub fn install_contract(
        &mut self,
        channel_id: &str,
        name: &str,
        version: &str,
        rules: RuleSet,
        installed_at: u64,
    ) -> Result<ContractDescriptor, LifecycleError> {
        parse_version(version)?;
        if self.history.get(name).is_some_and(|h| h.iter().any(|d| d.version == version)) {
            return Err(LifecycleError::DuplicateVersion {
                name: name.to_string(),
                version: version.to_string(),
            });
        }
        let descriptor = ContractDescriptor {
            name: name.to_string(),
            version: version.to_string(),
            rule_set_digest_hex: hex::encode(rules.digest()),
            installed_at,
        };
        let slot = self.slot(channel_id)?;
        slot.descriptor = descriptor.clone();
        slot.rules = rules;
        self.history.entry(name.to_string()).or_default().push(descriptor.clone());
        Ok(descriptor)
    }

    /// Amendment path. Approvals must carry at least one valid IRB
    /// signature plus valid signatures from a majority of the channel's
    /// endorsers; the new version must strictly increase.
    #[allow(clippy::too_many_arguments)]
    pub fn upgrade_contract(
        &mut self,
        msp: &Msp,
        endorser_ids: &BTreeSet<String>,
        channel_id: &str,
        name: &str,
        new_version: &str,
        new_rules: RuleSet,
        approvals: &[(String, Signature)],
        installed_at: u64,
    ) -> Result<ContractDescriptor, LifecycleError> {
        let current = self
            .channels
            .get(channel_id)
            .ok_or_else(|| LifecycleError::UnknownChannel(channel_id.to_string()))?;
        if !version_gt(new_version, &current.descriptor.version)? {
            return Err(LifecycleError::NonMonotoneVersion {
                from: current.descriptor.version.clone(),
                to: new_version.to_string(),
            });
        }
        let message = approval_message(channel_id, name, new_version, &new_rules.digest());
        let mut irb_ok = false;
        let mut endorsing: BTreeSet<&str> = BTreeSet::new();
        for (id, sig) in approvals {
            if !msp.verify_by(id, &message, sig) {
                continue;
            }
            let ident = msp.get(id).expect("verified identity exists");
            if ident.role == Role::Irb {
                irb_ok = true;
            }
            if endorser_ids.contains(id) {
                endorsing.insert(id);
            }
        }
        if !irb_ok {
            return Err(LifecycleError::InsufficientApprovals("no IRB approval".to_string()));
        }
        let majority = endorser_ids.len() / 2 + 1;
        if endorsing.len() < majority {
            return Err(LifecycleError::InsufficientApprovals(format!(
                "{} of {} endorsers approved, need {}",
                endorsing.len(),
                endorser_ids.len(),
                majority
            )));
        }
        self.install_contract(channel_id, name, new_version, new_rules, installed_at)
    }

    pub fn current(&self, channel_id: &str) -> Option<(&ContractDescriptor, &RuleSet)> {
        self.channels
            .get(channel_id)
            .filter(|i| !i.descriptor.name.is_empty())
            .map(|i| (&i.descriptor, &i.rules))
    }

    /// Chronological lifecycle history for one contract name.
    pub fn version_history(&self, name: &str) -> Vec<ContractDescriptor> {
        self.history.get(name).cloned().unwrap_or_default()
    }
}
