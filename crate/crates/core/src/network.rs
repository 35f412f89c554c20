//! In-process network simulation: one peer node per enrolled identity,
//! each holding ledger replicas for its channels, plus a single ordering
//! service. Drives the full transaction pipeline (propose, endorse,
//! submit, cut, distribute) and crash/recovery with state transfer.
//!
//! The orderer is deliberately a single point of failure: while it is
//! down no channel can order or cut blocks, and submission fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use thiserror::Error;

use crate::chaincode::{
    self, ContractDescriptor, ContractError, ContractRegistry, InvocationContext, LifecycleError,
    RuleSet,
};
use crate::channel::{
    check_endorsements, default_threshold, ChannelConfig, ConfigError, Endorsement, Proposal,
};
use crate::codec::{sha256, Encoder};
use crate::identity::{IdentityError, Msp, Role, Signature};
use crate::ledger::{
    Block, HistoryEntry, Ledger, LedgerError, LedgerIndex, Transaction, TxEndorsement,
    ValidityFlag, Version, WriteOp,
};
use crate::offchain::BlobStore;
use crate::protocol::TrialProtocol;
use crate::records::{ViolationCode, ViolationEntry};

/// Channel carrying channel-creation and contract-upgrade records.
/// Every identity is a member; IRB and coordinating-center identities
/// endorse.
pub const SYSTEM_CHANNEL: &str = "system";
/// Reserved node id for the ordering service.
pub const ORDERER_ID: &str = "orderer";
/// Transactions per block.
pub const BATCH_SIZE: usize = 10;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("unknown channel '{0}'")]
    UnknownChannel(String),
    #[error("channel '{0}' already exists")]
    DuplicateChannel(String),
    #[error("channel '{0}' has no installed contract")]
    NoContract(String),
    #[error("unknown member '{0}'")]
    UnknownMember(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("'{identity_id}' is not a member of channel '{channel_id}'")]
    NotAMember { identity_id: String, channel_id: String },
    #[error("'{identity_id}' may not access channel '{channel_id}'")]
    AccessDenied { identity_id: String, channel_id: String },
    #[error("node '{0}' is down")]
    NodeDown(String),
    #[error("ordering service is down")]
    OrdererDown,
    #[error("bad signature from '{0}'")]
    BadSignature(String),
    #[error("identifier '{0}' is reserved")]
    ReservedId(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Up,
    Down,
}

/// One participant's peer: a ledger replica per channel it belongs to,
/// plus an inbox of sealed blocks not yet applied (it fills while the
/// node is down).
#[derive(Debug)]
pub struct Node {
    pub identity_id: String,
    pub status: NodeStatus,
    ledgers: BTreeMap<String, Ledger>,
    inbox: BTreeMap<String, Vec<Block>>,
}

impl Node {
    fn new(identity_id: &str) -> Node {
        Node {
            identity_id: identity_id.to_string(),
            status: NodeStatus::Up,
            ledgers: BTreeMap::new(),
            inbox: BTreeMap::new(),
        }
    }

    pub fn is_up(&self) -> bool {
        self.status == NodeStatus::Up
    }

    pub fn ledger(&self, channel_id: &str) -> Option<&Ledger> {
        self.ledgers.get(channel_id)
    }

    fn join(&mut self, channel_id: &str) {
        self.ledgers.insert(channel_id.to_string(), Ledger::new(channel_id));
        self.inbox.insert(channel_id.to_string(), Vec::new());
    }

    /// Apply queued blocks in order; stale blocks are dropped, and the
    /// queue stops at the first block that fails verification.
    fn drain_inbox(&mut self) {
        for (channel_id, queue) in &mut self.inbox {
            let ledger = self.ledgers.get_mut(channel_id).expect("replica exists");
            let mut applied = 0;
            for block in queue.iter() {
                if block.height <= ledger.height() {
                    applied += 1;
                    continue;
                }
                if ledger.apply_block(block).is_err() {
                    break;
                }
                applied += 1;
            }
            queue.drain(..applied);
        }
    }
}

struct ChannelState {
    config: ChannelConfig,
    pending: VecDeque<Transaction>,
    next_nonce: u64,
}

/// Result of endorsement gathering for one proposal.
#[derive(Debug)]
pub enum ProposeOutcome {
    /// Contract simulation succeeded on the endorsing peers.
    Endorsed { endorsements: Vec<Endorsement>, response: Option<String> },
    /// The contract raised a rule violation: the proposal comes back with
    /// zero endorsements, plus the violation-log write the contract
    /// produced so the rejection can still be committed to the ledger.
    Rejected { entry: ViolationEntry, log_write: Vec<(String, WriteOp)> },
}

/// Final fate of a transaction driven end to end by [`Network::transact`].
#[derive(Debug)]
pub enum TxOutcome {
    Committed {
        tx_id: String,
        block_height: u64,
        validity: ValidityFlag,
        response: Option<String>,
    },
    /// The proposal was rejected by the contract; a violation-log
    /// transaction with the same tx id committed in its place.
    Rejected { tx_id: String, block_height: u64, entry: ViolationEntry },
}

pub struct Network {
    pub msp: Msp,
    pub registry: ContractRegistry,
    pub blobs: BlobStore,
    nodes: BTreeMap<String, Node>,
    orderer: Node,
    channels: BTreeMap<String, ChannelState>,
    pub day: u64,
    pub tick: u64,
}

impl Network {
    /// Enroll the roster, give every identity a peer node, and create the
    /// system channel (all identities as members; IRB plus coordinating
    /// center as endorsers, falling back to every member when a roster
    /// has neither).
    pub fn start(
        roster: &[(String, Role, Option<String>)],
        blob_root: &Path,
    ) -> Result<Network, NetError> {
        let msp = Msp::new();
        let mut nodes = BTreeMap::new();
        for (id, role, site) in roster {
            if id == ORDERER_ID || id == SYSTEM_CHANNEL {
                return Err(NetError::ReservedId(id.clone()));
            }
            msp.enroll(id, *role, site.as_deref())?;
            nodes.insert(id.clone(), Node::new(id));
        }
        let members: BTreeSet<String> = roster.iter().map(|(id, _, _)| id.clone()).collect();
        let mut endorsers: BTreeSet<String> = roster
            .iter()
            .filter(|(_, role, _)| matches!(role, Role::Irb | Role::CoordinatingCenter))
            .map(|(id, _, _)| id.clone())
            .collect();
        if endorsers.is_empty() {
            endorsers = members.clone();
        }
        let config = ChannelConfig {
            channel_id: SYSTEM_CHANNEL.to_string(),
            members,
            endorsers: endorsers.clone(),
            threshold_m: default_threshold(endorsers.len()),
            contract_name: "lifecycle".to_string(),
            contract_version: "1".to_string(),
        };
        config.validate()?;
        let mut orderer = Node::new(ORDERER_ID);
        orderer.join(SYSTEM_CHANNEL);
        for node in nodes.values_mut() {
            node.join(SYSTEM_CHANNEL);
        }
        let mut channels = BTreeMap::new();
        channels.insert(
            SYSTEM_CHANNEL.to_string(),
            ChannelState { config, pending: VecDeque::new(), next_nonce: 1 },
        );
        Ok(Network {
            msp,
            registry: ContractRegistry::new(),
            blobs: BlobStore::new(blob_root),
            nodes,
            orderer,
            channels,
            day: 0,
            tick: 0,
        })
    }

    fn node_up(&self, id: &str) -> bool {
        self.nodes.get(id).is_some_and(Node::is_up)
    }

    /// Create a channel, install its contract, and record both on the
    /// system channel.
    pub fn create_channel(&mut self, config: ChannelConfig, rules: RuleSet) -> Result<(), NetError> {
        config.validate()?;
        let id = config.channel_id.clone();
        if id == SYSTEM_CHANNEL || id == ORDERER_ID {
            return Err(NetError::ReservedId(id));
        }
        if self.channels.contains_key(&id) {
            return Err(NetError::DuplicateChannel(id));
        }
        for member in &config.members {
            if !self.msp.contains(member) {
                return Err(NetError::UnknownMember(member.clone()));
            }
            if !self.nodes.contains_key(member) {
                return Err(NetError::UnknownNode(member.clone()));
            }
        }
        for member in &config.members {
            self.nodes.get_mut(member).expect("checked above").join(&id);
        }
        self.orderer.join(&id);
        self.registry.register_channel(&id);
        let installed_at = self.system_height() + 1;
        let descriptor = self.registry.install_contract(
            &id,
            &config.contract_name,
            &config.contract_version,
            rules,
            installed_at,
        )?;
        let writes = vec![
            (
                format!("channel/{id}"),
                WriteOp::Put(serde_json::to_vec(&config).expect("config serializes")),
            ),
            (
                format!("lifecycle/{}/{}", descriptor.name, descriptor.version),
                WriteOp::Put(serde_json::to_vec(&descriptor).expect("descriptor serializes")),
            ),
        ];
        self.channels.insert(
            id.clone(),
            ChannelState { config, pending: VecDeque::new(), next_nonce: 1 },
        );
        self.commit_lifecycle_record("create_channel", vec![id], writes)
    }

    /// Replace a channel's contract. `approvals` must carry at least one
    /// valid IRB signature and valid signatures from a majority of the
    /// channel's endorsers over the upgrade approval message; proposals
    /// endorsed under the old version fail commit from the moment this
    /// returns.
    pub fn upgrade_contract(
        &mut self,
        channel_id: &str,
        new_version: &str,
        new_rules: RuleSet,
        approvals: &[(String, Signature)],
    ) -> Result<(), NetError> {
        let endorsers = self
            .channels
            .get(channel_id)
            .ok_or_else(|| NetError::UnknownChannel(channel_id.to_string()))?
            .config
            .endorsers
            .clone();
        let name = self
            .registry
            .current(channel_id)
            .ok_or_else(|| NetError::NoContract(channel_id.to_string()))?
            .0
            .name
            .clone();
        let installed_at = self.system_height() + 1;
        let descriptor = self.registry.upgrade_contract(
            &self.msp,
            &endorsers,
            channel_id,
            &name,
            new_version,
            new_rules,
            approvals,
            installed_at,
        )?;
        let state = self.channels.get_mut(channel_id).expect("checked above");
        state.config.contract_version = new_version.to_string();
        let writes = vec![(
            format!("lifecycle/{}/{}", descriptor.name, descriptor.version),
            WriteOp::Put(serde_json::to_vec(&descriptor).expect("descriptor serializes")),
        )];
        self.commit_lifecycle_record(
            "upgrade_contract",
            vec![channel_id.to_string(), name, new_version.to_string()],
            writes,
        )
    }

    fn system_height(&self) -> u64 {
        self.orderer.ledgers.get(SYSTEM_CHANNEL).expect("system replica").height()
    }

    /// Commit a lifecycle write to the system channel as a real signed
    /// transaction: proposed by the lowest-id IRB identity (falling back
    /// to the lowest-id system endorser) and endorsed by the up system
    /// endorsers. The system channel has no contract, so the write set is
    /// built here rather than simulated.
    fn commit_lifecycle_record(
        &mut self,
        function: &str,
        args: Vec<String>,
        writes: Vec<(String, WriteOp)>,
    ) -> Result<(), NetError> {
        let (endorsers, nonce) = {
            let sys = self.channels.get_mut(SYSTEM_CHANNEL).expect("system channel");
            let nonce = sys.next_nonce;
            sys.next_nonce += 1;
            (sys.config.endorsers.clone(), nonce)
        };
        let proposer = self
            .msp
            .directory()
            .into_iter()
            .filter(|i| i.role == Role::Irb)
            .map(|i| i.id)
            .min()
            .or_else(|| endorsers.iter().next().cloned())
            .expect("system channel has endorsers");
        let mut proposal = Proposal {
            channel_id: SYSTEM_CHANNEL.to_string(),
            contract_name: "lifecycle".to_string(),
            contract_version: "1".to_string(),
            function: function.to_string(),
            args,
            proposer_id: proposer,
            nonce,
            signature: Signature(vec![]),
        };
        proposal.sign(&self.msp)?;
        let digest = proposal.digest();
        let mut endorsements = Vec::new();
        for id in &endorsers {
            if !self.node_up(id) {
                continue;
            }
            endorsements.push(Endorsement::sign(
                &self.msp,
                id,
                &digest,
                Vec::new(),
                writes.clone(),
            )?);
        }
        self.submit(&proposal, &endorsements)?;
        self.cut_block(SYSTEM_CHANNEL)?;
        Ok(())
    }

    /// Build and sign a proposal on behalf of `proposer_id`, stamping the
    /// channel's current contract name and version and a fresh nonce.
    pub fn make_proposal(
        &mut self,
        proposer_id: &str,
        channel_id: &str,
        function: &str,
        args: Vec<String>,
    ) -> Result<Proposal, NetError> {
        let state = self
            .channels
            .get_mut(channel_id)
            .ok_or_else(|| NetError::UnknownChannel(channel_id.to_string()))?;
        if !state.config.is_member(proposer_id) {
            return Err(NetError::NotAMember {
                identity_id: proposer_id.to_string(),
                channel_id: channel_id.to_string(),
            });
        }
        let (contract_name, contract_version) = match self.registry.current(channel_id) {
            Some((descriptor, _)) => (descriptor.name.clone(), descriptor.version.clone()),
            None => (state.config.contract_name.clone(), state.config.contract_version.clone()),
        };
        let nonce = state.next_nonce;
        state.next_nonce += 1;
        let mut proposal = Proposal {
            channel_id: channel_id.to_string(),
            contract_name,
            contract_version,
            function: function.to_string(),
            args,
            proposer_id: proposer_id.to_string(),
            nonce,
            signature: Signature(vec![]),
        };
        proposal.sign(&self.msp)?;
        Ok(proposal)
    }

    /// Simulate the proposal on every up endorsing peer and collect their
    /// signed endorsements. The first up endorser's result is
    /// authoritative: its hard errors propagate, and its rule violation
    /// turns the whole proposal into a rejection with zero endorsements.
    pub fn propose(&self, proposal: &Proposal) -> Result<ProposeOutcome, NetError> {
        let state = self
            .channels
            .get(&proposal.channel_id)
            .ok_or_else(|| NetError::UnknownChannel(proposal.channel_id.clone()))?;
        if !state.config.is_member(&proposal.proposer_id) {
            return Err(NetError::NotAMember {
                identity_id: proposal.proposer_id.clone(),
                channel_id: proposal.channel_id.clone(),
            });
        }
        let node = self
            .nodes
            .get(&proposal.proposer_id)
            .ok_or_else(|| NetError::UnknownNode(proposal.proposer_id.clone()))?;
        if !node.is_up() {
            return Err(NetError::NodeDown(proposal.proposer_id.clone()));
        }
        if !proposal.verify(&self.msp) {
            return Err(NetError::BadSignature(proposal.proposer_id.clone()));
        }
        let (_, rules) = self
            .registry
            .current(&proposal.channel_id)
            .ok_or_else(|| NetError::NoContract(proposal.channel_id.clone()))?;
        let invoker = self.msp.get(&proposal.proposer_id)?;
        let ctx = InvocationContext {
            invoker: &invoker,
            channel_id: &proposal.channel_id,
            function: &proposal.function,
            args: &proposal.args,
            day: self.day,
            blobs: &self.blobs,
        };
        let digest = proposal.digest();
        let mut endorsements = Vec::new();
        let mut response = None;
        let mut first = true;
        for endorser_id in &state.config.endorsers {
            let Some(peer) = self.nodes.get(endorser_id) else { continue };
            if !peer.is_up() {
                continue;
            }
            let Some(replica) = peer.ledgers.get(&proposal.channel_id) else { continue };
            let sim = match chaincode::invoke(rules, &ctx, replica) {
                Ok(sim) => sim,
                Err(err) if first => return Err(err.into()),
                Err(_) => continue,
            };
            if first {
                first = false;
                if let Some(entry) = sim.violation {
                    return Ok(ProposeOutcome::Rejected { entry, log_write: sim.write_set });
                }
                response = sim.response.clone();
            } else if sim.violation.is_some() {
                continue;
            }
            endorsements.push(Endorsement::sign(
                &self.msp,
                endorser_id,
                &digest,
                sim.read_set,
                sim.write_set,
            )?);
        }
        Ok(ProposeOutcome::Endorsed { endorsements, response })
    }

    /// Hand a proposal and its endorsements to the ordering service.
    /// Nothing about the content is an error: a proposal that fails the
    /// endorsement policy is queued with `InvalidEndorsement` and its
    /// invalidity is recorded in the block. Evidence of tampering (a
    /// forged endorsement signature, or endorsers disagreeing on the
    /// simulated rwset) additionally queues a tamper-log transaction.
    pub fn submit(
        &mut self,
        proposal: &Proposal,
        endorsements: &[Endorsement],
    ) -> Result<String, NetError> {
        if !self.orderer.is_up() {
            return Err(NetError::OrdererDown);
        }
        let config = self
            .channels
            .get(&proposal.channel_id)
            .ok_or_else(|| NetError::UnknownChannel(proposal.channel_id.clone()))?
            .config
            .clone();
        let digest = proposal.digest();
        let check = check_endorsements(&self.msp, &config, &digest, endorsements);
        let valid =
            config.is_member(&proposal.proposer_id) && proposal.verify(&self.msp) && check.valid;
        let (read_set, write_set) = match endorsements.first() {
            Some(e) => (e.read_set.clone(), e.write_set.clone()),
            None => (Vec::new(), Vec::new()),
        };
        let tx = Transaction {
            tx_id: proposal.tx_id(),
            channel_id: proposal.channel_id.clone(),
            contract_name: proposal.contract_name.clone(),
            contract_version: proposal.contract_version.clone(),
            function: proposal.function.clone(),
            args: proposal.args.clone(),
            proposer_id: proposal.proposer_id.clone(),
            read_set,
            write_set,
            endorsements: endorsements
                .iter()
                .map(|e| TxEndorsement {
                    endorser_id: e.endorser_id.clone(),
                    signature: e.signature.clone(),
                })
                .collect(),
            timestamp: proposal.nonce,
            validity: if valid { ValidityFlag::Valid } else { ValidityFlag::InvalidEndorsement },
        };
        let tx_id = tx.tx_id.clone();
        let tamper_tx = check.tampered.map(|detail| {
            let nonce = {
                let state = self.channels.get_mut(&proposal.channel_id).expect("checked above");
                let nonce = state.next_nonce;
                state.next_nonce += 1;
                nonce
            };
            self.tamper_log_tx(&config, proposal, detail, nonce)
        });
        let state = self.channels.get_mut(&proposal.channel_id).expect("checked above");
        state.pending.push_back(tx);
        if let Some(tamper) = tamper_tx {
            state.pending.push_back(tamper);
        }
        Ok(tx_id)
    }

    /// System-generated record of tamper evidence against `offending`,
    /// signed by an up endorser as proposer and endorsed mechanically by
    /// the up endorsers.
    fn tamper_log_tx(
        &self,
        config: &ChannelConfig,
        offending: &Proposal,
        detail: String,
        nonce: u64,
    ) -> Transaction {
        let entry = ViolationEntry {
            code: ViolationCode::TamperDetected,
            channel_id: config.channel_id.clone(),
            tx_id: offending.tx_id(),
            detail,
            day: self.day,
        };
        let mut enc = Encoder::new();
        enc.put_str(&entry.channel_id);
        enc.put_str(&entry.tx_id);
        enc.put_str(&entry.detail);
        enc.put_u64(entry.day);
        let hash = sha256(&enc.finish());
        let key = format!("violation/{}/{}", &hex::encode(hash)[..16], entry.day);
        let writes = vec![(
            key,
            WriteOp::Put(serde_json::to_vec(&entry).expect("entry serializes")),
        )];
        let proposer = config
            .endorsers
            .iter()
            .find(|id| self.node_up(id))
            .or_else(|| config.endorsers.iter().next())
            .expect("channel has endorsers")
            .clone();
        let mut synthetic = Proposal {
            channel_id: config.channel_id.clone(),
            contract_name: offending.contract_name.clone(),
            contract_version: offending.contract_version.clone(),
            function: "log_tamper".to_string(),
            args: vec![offending.tx_id()],
            proposer_id: proposer,
            nonce,
            signature: Signature(vec![]),
        };
        let _ = synthetic.sign(&self.msp);
        let digest = synthetic.digest();
        let endorsements: Vec<TxEndorsement> = config
            .endorsers
            .iter()
            .filter(|id| self.node_up(id))
            .filter_map(|id| {
                Endorsement::sign(&self.msp, id, &digest, Vec::new(), writes.clone())
                    .ok()
                    .map(|e| TxEndorsement { endorser_id: e.endorser_id, signature: e.signature })
            })
            .collect();
        Transaction {
            tx_id: format!("tamper-{}", &hex::encode(hash)[..8]),
            channel_id: synthetic.channel_id,
            contract_name: synthetic.contract_name,
            contract_version: synthetic.contract_version,
            function: synthetic.function,
            args: synthetic.args,
            proposer_id: synthetic.proposer_id,
            read_set: Vec::new(),
            write_set: writes,
            endorsements,
            timestamp: nonce,
            validity: ValidityFlag::Valid,
        }
    }

    /// Order up to [`BATCH_SIZE`] pending transactions into a block, seal
    /// it on the orderer's replica, and distribute it to every member
    /// node's inbox (up members apply immediately). Transactions endorsed
    /// under a contract version other than the channel's current one are
    /// flagged `InvalidContractRule` here, with a STALE_VERSION violation
    /// entry embedded in the transaction for the audit trail.
    pub fn cut_block(&mut self, channel_id: &str) -> Result<Option<u64>, NetError> {
        if !self.orderer.is_up() {
            return Err(NetError::OrdererDown);
        }
        let current_version = self.registry.current(channel_id).map(|(d, _)| d.version.clone());
        let day = self.day;
        let state = self
            .channels
            .get_mut(channel_id)
            .ok_or_else(|| NetError::UnknownChannel(channel_id.to_string()))?;
        if state.pending.is_empty() {
            return Ok(None);
        }
        let count = state.pending.len().min(BATCH_SIZE);
        let mut tx_list: Vec<Transaction> = state.pending.drain(..count).collect();
        if let Some(version) = current_version {
            for tx in &mut tx_list {
                if tx.validity == ValidityFlag::Valid && tx.contract_version != version {
                    tx.validity = ValidityFlag::InvalidContractRule;
                    let entry = ViolationEntry {
                        code: ViolationCode::StaleVersion,
                        channel_id: channel_id.to_string(),
                        tx_id: String::new(),
                        detail: format!(
                            "endorsed under v{}, current v{}",
                            tx.contract_version, version
                        ),
                        day,
                    };
                    let mut enc = Encoder::new();
                    enc.put_str(channel_id);
                    enc.put_str(&tx.tx_id);
                    enc.put_str(&entry.detail);
                    enc.put_u64(day);
                    let hash = sha256(&enc.finish());
                    let key = format!("violation/{}/{}", &hex::encode(hash)[..16], day);
                    tx.write_set.push((
                        key,
                        WriteOp::Put(serde_json::to_vec(&entry).expect("entry serializes")),
                    ));
                }
            }
        }
        let members = state.config.members.clone();
        let block =
            self.orderer.ledgers.get_mut(channel_id).expect("orderer replica").append_block(tx_list).clone();
        let height = block.height;
        for member in &members {
            let node = self.nodes.get_mut(member).expect("member has a node");
            node.inbox.get_mut(channel_id).expect("member replica").push(block.clone());
            if node.is_up() {
                node.drain_inbox();
            }
        }
        Ok(Some(height))
    }

    /// Drive one invocation end to end: propose, endorse, submit, cut.
    /// A contract rejection still commits, as a violation-log transaction
    /// under the same tx id, so the refusal itself is auditable.
    pub fn transact(
        &mut self,
        proposer_id: &str,
        channel_id: &str,
        function: &str,
        args: Vec<String>,
    ) -> Result<TxOutcome, NetError> {
        let proposal = self.make_proposal(proposer_id, channel_id, function, args)?;
        match self.propose(&proposal)? {
            ProposeOutcome::Endorsed { endorsements, response } => {
                let tx_id = self.submit(&proposal, &endorsements)?;
                let height = self.cut_until_committed(channel_id, &tx_id)?;
                let validity = self
                    .find_tx(channel_id, height, &tx_id)
                    .map(|tx| tx.validity)
                    .expect("tx in cut block");
                Ok(TxOutcome::Committed { tx_id, block_height: height, validity, response })
            }
            ProposeOutcome::Rejected { entry, log_write } => {
                let digest = proposal.digest();
                let endorsers =
                    self.channels.get(channel_id).expect("checked above").config.endorsers.clone();
                let mut endorsements = Vec::new();
                for id in &endorsers {
                    if !self.node_up(id) {
                        continue;
                    }
                    endorsements.push(Endorsement::sign(
                        &self.msp,
                        id,
                        &digest,
                        Vec::new(),
                        log_write.clone(),
                    )?);
                }
                let tx_id = self.submit(&proposal, &endorsements)?;
                let height = self.cut_until_committed(channel_id, &tx_id)?;
                Ok(TxOutcome::Rejected { tx_id, block_height: height, entry })
            }
        }
    }

    fn cut_until_committed(&mut self, channel_id: &str, tx_id: &str) -> Result<u64, NetError> {
        while let Some(height) = self.cut_block(channel_id)? {
            if self.find_tx(channel_id, height, tx_id).is_some() {
                return Ok(height);
            }
        }
        unreachable!("submitted tx {tx_id} never cut on {channel_id}")
    }

    fn find_tx(&self, channel_id: &str, height: u64, tx_id: &str) -> Option<&Transaction> {
        let ledger = self.orderer.ledgers.get(channel_id)?;
        let block = ledger.blocks().get(height as usize)?;
        block.tx_list.iter().find(|tx| tx.tx_id == tx_id)
    }

    /// Read committed state through a member's own replica. Non-members
    /// get the same error for a real channel as for a nonexistent one, so
    /// channel existence is not observable from outside.
    pub fn read_channel(
        &self,
        identity_id: &str,
        channel_id: &str,
        key: &str,
    ) -> Result<Option<(Vec<u8>, Version)>, NetError> {
        let ledger = self.member_replica(identity_id, channel_id)?;
        Ok(ledger.get_state(key).map(|(value, version)| (value.to_vec(), version)))
    }

    /// Scan committed state by key prefix through a member's own replica.
    pub fn scan_channel(
        &self,
        identity_id: &str,
        channel_id: &str,
        prefix: &str,
    ) -> Result<Vec<(String, Vec<u8>)>, NetError> {
        Ok(self.member_replica(identity_id, channel_id)?.scan_prefix(prefix))
    }

    /// Valid-transaction write history for one key, oldest first.
    pub fn query_history(
        &self,
        identity_id: &str,
        channel_id: &str,
        key: &str,
    ) -> Result<Vec<HistoryEntry>, NetError> {
        Ok(self.member_replica(identity_id, channel_id)?.query_history(key))
    }

    fn member_replica(&self, identity_id: &str, channel_id: &str) -> Result<&Ledger, NetError> {
        let denied = || NetError::AccessDenied {
            identity_id: identity_id.to_string(),
            channel_id: channel_id.to_string(),
        };
        let member = self
            .channels
            .get(channel_id)
            .is_some_and(|state| state.config.is_member(identity_id));
        if !member {
            return Err(denied());
        }
        let node = self
            .nodes
            .get(identity_id)
            .ok_or_else(|| NetError::UnknownNode(identity_id.to_string()))?;
        if !node.is_up() {
            return Err(NetError::NodeDown(identity_id.to_string()));
        }
        node.ledgers.get(channel_id).ok_or_else(denied)
    }

    /// Channels the identity belongs to, excluding the system channel.
    pub fn list_channels(&self, identity_id: &str) -> Vec<String> {
        self.channels
            .iter()
            .filter(|(id, state)| *id != SYSTEM_CHANNEL && state.config.is_member(identity_id))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Infrastructure accessor: a node's replica of one channel. `node_id`
    /// may be [`ORDERER_ID`]. Bypasses membership gating; not a client API.
    pub fn node_ledger(&self, node_id: &str, channel_id: &str) -> Result<&Ledger, NetError> {
        let node = if node_id == ORDERER_ID {
            &self.orderer
        } else {
            self.nodes.get(node_id).ok_or_else(|| NetError::UnknownNode(node_id.to_string()))?
        };
        node.ledgers
            .get(channel_id)
            .ok_or_else(|| NetError::UnknownChannel(channel_id.to_string()))
    }

    pub(crate) fn node_ledger_mut(
        &mut self,
        node_id: &str,
        channel_id: &str,
    ) -> Option<&mut Ledger> {
        let node = if node_id == ORDERER_ID {
            &mut self.orderer
        } else {
            self.nodes.get_mut(node_id)?
        };
        node.ledgers.get_mut(channel_id)
    }

    pub fn channel_config(&self, channel_id: &str) -> Option<&ChannelConfig> {
        self.channels.get(channel_id).map(|state| &state.config)
    }

    pub fn current_rules(&self, channel_id: &str) -> Option<(&ContractDescriptor, &RuleSet)> {
        self.registry.current(channel_id)
    }

    pub fn channel_ids(&self) -> Vec<String> {
        self.channels.keys().cloned().collect()
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.keys().cloned().collect()
    }

    pub fn node_status(&self, node_id: &str) -> Option<NodeStatus> {
        if node_id == ORDERER_ID {
            return Some(self.orderer.status);
        }
        self.nodes.get(node_id).map(|n| n.status)
    }

    /// Take a node (or the orderer) offline. Blocks cut while it is down
    /// accumulate in its inbox.
    pub fn crash_node(&mut self, node_id: &str) -> Result<(), NetError> {
        if node_id == ORDERER_ID {
            self.orderer.status = NodeStatus::Down;
            return Ok(());
        }
        self.nodes
            .get_mut(node_id)
            .ok_or_else(|| NetError::UnknownNode(node_id.to_string()))?
            .status = NodeStatus::Down;
        Ok(())
    }

    /// Bring a node back up and catch it up: state transfer from up peer
    /// replicas (lowest node id first, skipping any source whose blocks
    /// fail verification), then drain its own inbox.
    pub fn recover_node(&mut self, node_id: &str) -> Result<(), NetError> {
        if node_id == ORDERER_ID {
            self.orderer.status = NodeStatus::Up;
            return Ok(());
        }
        {
            let node = self
                .nodes
                .get_mut(node_id)
                .ok_or_else(|| NetError::UnknownNode(node_id.to_string()))?;
            if node.is_up() {
                return Ok(());
            }
            node.status = NodeStatus::Up;
        }
        self.state_transfer(node_id);
        self.nodes.get_mut(node_id).expect("checked above").drain_inbox();
        Ok(())
    }

    fn state_transfer(&mut self, node_id: &str) {
        let channel_ids: Vec<String> =
            self.nodes[node_id].ledgers.keys().cloned().collect();
        for channel_id in channel_ids {
            let sources: Vec<String> = self.channels[&channel_id]
                .config
                .members
                .iter()
                .filter(|m| m.as_str() != node_id && self.node_up(m))
                .cloned()
                .collect();
            let mut progress = true;
            while progress {
                progress = false;
                for source in &sources {
                    let my_height = self.nodes[node_id].ledgers[&channel_id].height();
                    let blocks: Vec<Block> = self.nodes[source].ledgers[&channel_id]
                        .blocks()
                        .iter()
                        .filter(|b| b.height > my_height)
                        .cloned()
                        .collect();
                    for block in &blocks {
                        let target = self
                            .nodes
                            .get_mut(node_id)
                            .expect("recovering node")
                            .ledgers
                            .get_mut(&channel_id)
                            .expect("replica exists");
                        if target.apply_block(block).is_err() {
                            break;
                        }
                        progress = true;
                    }
                }
            }
        }
    }

    pub fn advance_tick(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    pub fn advance_day(&mut self, days: u64) -> u64 {
        self.day += days;
        self.day
    }

    /// Persist every channel's chain from the orderer's replicas, one
    /// `<channel_id>.blocks` file per channel. Returns the head index of
    /// each saved chain.
    pub fn save_ledgers(&self, dir: &Path) -> Result<Vec<LedgerIndex>, NetError> {
        let mut indexes = Vec::new();
        for (channel_id, ledger) in &self.orderer.ledgers {
            ledger.save_blocks(&dir.join(format!("{channel_id}.blocks")))?;
            indexes.push(ledger.head_index());
        }
        Ok(indexes)
    }
}

/// Derive the standard four-channel layout from the enrolled roster:
/// enrollment (sites, subjects, coordinating center, DSMB), monitoring
/// (staff plus oversight, no subjects), analysis (sites and analysts),
/// and report (everyone with a stake in the study report). Endorsers are
/// the non-subject members; the threshold is a simple majority.
pub fn standard_channel_configs(
    msp: &Msp,
    protocol: &TrialProtocol,
) -> Vec<(ChannelConfig, RuleSet)> {
    use crate::chaincode::ContractKind;
    let directory = msp.directory();
    let with_roles = |roles: &[Role]| -> BTreeSet<String> {
        directory
            .iter()
            .filter(|i| roles.contains(&i.role))
            .map(|i| i.id.clone())
            .collect()
    };
    let build = |channel_id: &str, kind: ContractKind, roles: &[Role]| {
        let members = with_roles(roles);
        let endorsers: BTreeSet<String> = members
            .iter()
            .filter(|id| directory.iter().any(|i| &i.id == *id && i.role != Role::Subject))
            .cloned()
            .collect();
        let config = ChannelConfig {
            channel_id: channel_id.to_string(),
            threshold_m: default_threshold(endorsers.len()),
            members,
            endorsers,
            contract_name: channel_id.to_string(),
            contract_version: protocol.version.clone(),
        };
        (config, RuleSet { kind, protocol: protocol.clone() })
    };
    vec![
        build(
            "enrollment",
            ContractKind::Enrollment,
            &[
                Role::PrincipalInvestigator,
                Role::Subject,
                Role::CoordinatingCenter,
                Role::Dsmb,
            ],
        ),
        build(
            "monitoring",
            ContractKind::Monitoring,
            &[
                Role::PrincipalInvestigator,
                Role::Dsmb,
                Role::Sponsor,
                Role::CoordinatingCenter,
                Role::RegulatoryAgency,
            ],
        ),
        build(
            "analysis",
            ContractKind::Analysis,
            &[Role::PrincipalInvestigator, Role::Analyst],
        ),
        build(
            "report",
            ContractKind::Report,
            &[
                Role::PrincipalInvestigator,
                Role::Sponsor,
                Role::RegulatoryAgency,
                Role::CoordinatingCenter,
                Role::Subject,
            ],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::{approval_message, ContractKind};
    use tempfile::TempDir;

    fn roster() -> Vec<(String, Role, Option<String>)> {
        [
            ("cc-1", Role::CoordinatingCenter, None),
            ("dsmb-1", Role::Dsmb, None),
            ("irb-1", Role::Irb, None),
            ("pi-site1", Role::PrincipalInvestigator, Some("site1")),
            ("pi-site2", Role::PrincipalInvestigator, Some("site2")),
            ("subj-101", Role::Subject, Some("site1")),
        ]
        .into_iter()
        .map(|(id, role, site)| (id.to_string(), role, site.map(str::to_string)))
        .collect()
    }

    fn bench_rules() -> RuleSet {
        RuleSet { kind: ContractKind::Bench, protocol: TrialProtocol::fixture() }
    }

    fn bench_config(endorsers: &[&str], members_extra: &[&str]) -> ChannelConfig {
        let endorser_set: BTreeSet<String> = endorsers.iter().map(|s| s.to_string()).collect();
        let mut members = endorser_set.clone();
        members.extend(members_extra.iter().map(|s| s.to_string()));
        ChannelConfig {
            channel_id: "bench".to_string(),
            threshold_m: default_threshold(endorser_set.len()),
            members,
            endorsers: endorser_set,
            contract_name: "bench".to_string(),
            contract_version: "1.0".to_string(),
        }
    }

    /// Network with one "bench" channel: endorsers pi-site1/pi-site2/cc-1
    /// (m = 2), subj-101 a plain member.
    fn bench_net(tmp: &TempDir) -> Network {
        let mut net = Network::start(&roster(), tmp.path()).unwrap();
        net.create_channel(
            bench_config(&["pi-site1", "pi-site2", "cc-1"], &["subj-101"]),
            bench_rules(),
        )
        .unwrap();
        net
    }

    fn put(net: &mut Network, proposer: &str, key: &str, value: &str) -> TxOutcome {
        net.transact(proposer, "bench", "put", vec![key.to_string(), value.to_string()]).unwrap()
    }

    #[test]
    fn transact_commits_and_replicates() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        let outcome = put(&mut net, "pi-site1", "k1", "v1");
        let TxOutcome::Committed { validity, block_height, .. } = outcome else {
            panic!("expected commit, got {outcome:?}");
        };
        assert_eq!(validity, ValidityFlag::Valid);
        assert_eq!(block_height, 1);
        // every member replica converges on the same head and state
        let head = net.node_ledger(ORDERER_ID, "bench").unwrap().head_hash();
        for id in ["pi-site1", "pi-site2", "cc-1", "subj-101"] {
            let ledger = net.node_ledger(id, "bench").unwrap();
            assert_eq!(ledger.head_hash(), head, "{id} diverged");
        }
        let (value, _) = net.read_channel("subj-101", "bench", "k1").unwrap().unwrap();
        assert_eq!(value, b"v1");
    }

    #[test]
    fn non_members_cannot_observe_the_channel() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        put(&mut net, "pi-site1", "k1", "v1");
        // a real channel and a nonexistent one are indistinguishable
        let real = net.read_channel("dsmb-1", "bench", "k1").unwrap_err();
        let fake = net.read_channel("dsmb-1", "no-such-channel", "k1").unwrap_err();
        assert!(matches!(real, NetError::AccessDenied { .. }));
        assert!(matches!(fake, NetError::AccessDenied { .. }));
        assert!(matches!(
            net.make_proposal("dsmb-1", "bench", "put", vec![]).unwrap_err(),
            NetError::NotAMember { .. }
        ));
        assert!(net.list_channels("dsmb-1").is_empty());
        assert_eq!(net.list_channels("subj-101"), vec!["bench".to_string()]);
    }

    #[test]
    fn short_endorsement_commits_invalid_and_applies_nothing() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        // only one of three endorsers up: threshold 2 unreachable
        net.crash_node("pi-site2").unwrap();
        net.crash_node("cc-1").unwrap();
        let outcome = put(&mut net, "pi-site1", "k1", "v1");
        let TxOutcome::Committed { validity, .. } = outcome else {
            panic!("expected commit, got {outcome:?}");
        };
        assert_eq!(validity, ValidityFlag::InvalidEndorsement);
        assert!(net.read_channel("pi-site1", "bench", "k1").unwrap().is_none());
    }

    #[test]
    fn forged_endorsement_signature_leaves_a_tamper_record() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        let proposal = net
            .make_proposal("pi-site1", "bench", "put", vec!["k1".into(), "v1".into()])
            .unwrap();
        let ProposeOutcome::Endorsed { mut endorsements, .. } = net.propose(&proposal).unwrap()
        else {
            panic!("expected endorsement");
        };
        assert_eq!(endorsements.len(), 3);
        endorsements[2].signature.0[0] ^= 0x01;
        let tx_id = net.submit(&proposal, &endorsements).unwrap();
        let height = net.cut_block("bench").unwrap().unwrap();
        let block = &net.node_ledger(ORDERER_ID, "bench").unwrap().blocks()[height as usize];
        // two honest endorsements still meet m=2, so the tx commits Valid
        let tx = block.tx_list.iter().find(|t| t.tx_id == tx_id).unwrap();
        assert_eq!(tx.validity, ValidityFlag::Valid);
        // and the forgery is recorded as a TAMPER_DETECTED log tx
        let tamper = block.tx_list.iter().find(|t| t.tx_id.starts_with("tamper-")).unwrap();
        assert_eq!(tamper.validity, ValidityFlag::Valid);
        let entry: ViolationEntry =
            serde_json::from_slice(match &tamper.write_set[0].1 {
                WriteOp::Put(v) => v,
                WriteOp::Delete => panic!("tamper log is a put"),
            })
            .unwrap();
        assert_eq!(entry.code, ViolationCode::TamperDetected);
        assert_eq!(entry.tx_id, tx_id);
        // the record landed in state on every member
        let (stored, _) = net
            .read_channel("subj-101", "bench", &tamper.write_set[0].0)
            .unwrap()
            .unwrap();
        assert_eq!(stored, match &tamper.write_set[0].1 {
            WriteOp::Put(v) => v.clone(),
            WriteOp::Delete => unreachable!(),
        });
    }

    #[test]
    fn stale_contract_version_fails_at_cut_with_violation_entry() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        let proposal = net
            .make_proposal("pi-site1", "bench", "put", vec!["k1".into(), "v1".into()])
            .unwrap();
        let ProposeOutcome::Endorsed { endorsements, .. } = net.propose(&proposal).unwrap() else {
            panic!("expected endorsement");
        };
        // upgrade lands between endorsement and submission
        let rules = bench_rules();
        let message = approval_message("bench", "bench", "1.1", &rules.digest());
        let approvals: Vec<(String, Signature)> = ["irb-1", "pi-site1", "pi-site2"]
            .iter()
            .map(|id| (id.to_string(), net.msp.sign(id, &message).unwrap()))
            .collect();
        net.upgrade_contract("bench", "1.1", rules, &approvals).unwrap();
        let tx_id = net.submit(&proposal, &endorsements).unwrap();
        let height = net.cut_block("bench").unwrap().unwrap();
        let block = &net.node_ledger(ORDERER_ID, "bench").unwrap().blocks()[height as usize];
        let tx = block.tx_list.iter().find(|t| t.tx_id == tx_id).unwrap();
        assert_eq!(tx.validity, ValidityFlag::InvalidContractRule);
        let (key, op) = tx.write_set.last().unwrap();
        assert!(key.starts_with("violation/"));
        let entry: ViolationEntry = match op {
            WriteOp::Put(v) => serde_json::from_slice(v).unwrap(),
            WriteOp::Delete => panic!("violation entry is a put"),
        };
        assert_eq!(entry.code, ViolationCode::StaleVersion);
        assert!(entry.detail.contains("v1.0") && entry.detail.contains("v1.1"));
        // invalid: the original write never applied
        assert!(net.read_channel("pi-site1", "bench", "k1").unwrap().is_none());
        // a fresh proposal under the new version goes through
        let outcome = put(&mut net, "pi-site1", "k1", "v2");
        assert!(matches!(
            outcome,
            TxOutcome::Committed { validity: ValidityFlag::Valid, .. }
        ));
    }

    #[test]
    fn upgrade_requires_irb_and_endorser_majority() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        let rules = bench_rules();
        let message = approval_message("bench", "bench", "1.1", &rules.digest());
        // endorser majority without any IRB signature
        let approvals: Vec<(String, Signature)> = ["pi-site1", "pi-site2", "cc-1"]
            .iter()
            .map(|id| (id.to_string(), net.msp.sign(id, &message).unwrap()))
            .collect();
        let err = net.upgrade_contract("bench", "1.1", rules, &approvals).unwrap_err();
        assert!(matches!(
            err,
            NetError::Lifecycle(LifecycleError::InsufficientApprovals(_))
        ));
    }

    #[test]
    fn orderer_down_blocks_ordering_until_recovery() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        net.crash_node(ORDERER_ID).unwrap();
        let err = net
            .transact("pi-site1", "bench", "put", vec!["k1".into(), "v1".into()])
            .unwrap_err();
        assert!(matches!(err, NetError::OrdererDown));
        net.recover_node(ORDERER_ID).unwrap();
        assert!(matches!(
            put(&mut net, "pi-site1", "k1", "v1"),
            TxOutcome::Committed { validity: ValidityFlag::Valid, .. }
        ));
    }

    #[test]
    fn crashed_member_catches_up_on_recovery() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        put(&mut net, "pi-site1", "k1", "v1");
        net.crash_node("pi-site2").unwrap();
        assert!(matches!(
            net.read_channel("pi-site2", "bench", "k1").unwrap_err(),
            NetError::NodeDown(_)
        ));
        put(&mut net, "pi-site1", "k2", "v2");
        put(&mut net, "pi-site1", "k3", "v3");
        // m=2 still held by pi-site1 + cc-1 while pi-site2 was down
        net.recover_node("pi-site2").unwrap();
        let head = net.node_ledger(ORDERER_ID, "bench").unwrap().head_hash();
        let recovered = net.node_ledger("pi-site2", "bench").unwrap();
        assert_eq!(recovered.head_hash(), head);
        assert_eq!(recovered.get_state("k3").unwrap().0, b"v3");
    }

    #[test]
    fn lifecycle_records_live_on_the_system_channel() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        let rules = bench_rules();
        let message = approval_message("bench", "bench", "2.0", &rules.digest());
        let approvals: Vec<(String, Signature)> = ["irb-1", "pi-site1", "pi-site2"]
            .iter()
            .map(|id| (id.to_string(), net.msp.sign(id, &message).unwrap()))
            .collect();
        net.upgrade_contract("bench", "2.0", rules, &approvals).unwrap();
        let sys = net.node_ledger("irb-1", SYSTEM_CHANNEL).unwrap();
        assert!(sys.get_state("channel/bench").is_some());
        assert!(sys.get_state("lifecycle/bench/1.0").is_some());
        assert!(sys.get_state("lifecycle/bench/2.0").is_some());
        let history = net.registry.version_history("bench");
        let versions: Vec<&str> = history.iter().map(|d| d.version.as_str()).collect();
        assert_eq!(versions, ["1.0", "2.0"]);
        // lifecycle txs carry real endorsements from the system endorsers
        let tx = &sys.blocks()[1].tx_list[0];
        assert_eq!(tx.validity, ValidityFlag::Valid);
        assert!(!tx.endorsements.is_empty());
    }

    #[test]
    fn standard_layout_assigns_roles_to_channels() {
        let tmp = TempDir::new().unwrap();
        let mut extended = roster();
        extended.push(("analyst-1".to_string(), Role::Analyst, None));
        extended.push(("sponsor-1".to_string(), Role::Sponsor, None));
        extended.push(("fda-1".to_string(), Role::RegulatoryAgency, None));
        let mut net = Network::start(&extended, tmp.path()).unwrap();
        for (config, rules) in standard_channel_configs(&net.msp, &TrialProtocol::fixture()) {
            net.create_channel(config, rules).unwrap();
        }
        assert_eq!(
            net.list_channels("pi-site1"),
            vec!["analysis", "enrollment", "monitoring", "report"]
        );
        assert_eq!(net.list_channels("analyst-1"), vec!["analysis"]);
        assert_eq!(net.list_channels("subj-101"), vec!["enrollment", "report"]);
        let enrollment = net.channel_config("enrollment").unwrap();
        assert!(!enrollment.endorsers.contains("subj-101"));
        assert!(enrollment.members.contains("subj-101"));
        let monitoring = net.channel_config("monitoring").unwrap();
        assert!(!monitoring.members.contains("subj-101"));
        assert_eq!(monitoring.threshold_m, default_threshold(monitoring.endorsers.len()));
    }

    #[test]
    fn batches_cut_at_most_ten_transactions() {
        let tmp = TempDir::new().unwrap();
        let mut net = bench_net(&tmp);
        for i in 0..13 {
            let proposal = net
                .make_proposal("pi-site1", "bench", "put", vec![format!("k{i}"), "v".into()])
                .unwrap();
            let ProposeOutcome::Endorsed { endorsements, .. } = net.propose(&proposal).unwrap()
            else {
                panic!("expected endorsement");
            };
            net.submit(&proposal, &endorsements).unwrap();
        }
        assert_eq!(net.cut_block("bench").unwrap(), Some(1));
        assert_eq!(net.cut_block("bench").unwrap(), Some(2));
        assert_eq!(net.cut_block("bench").unwrap(), None);
        let blocks = net.node_ledger(ORDERER_ID, "bench").unwrap().blocks();
        assert_eq!(blocks[1].tx_list.len(), 10);
        assert_eq!(blocks[2].tx_list.len(), 3);
    }
}
