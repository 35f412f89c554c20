//! Private channels: membership configuration, endorsement policies, and
//! the signed proposal/endorsement artifacts exchanged between clients,
//! endorsing peers, and the ordering service.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{sha256, Encoder, Hash32};
use crate::identity::{IdentityError, Msp, Signature};
use crate::ledger::{rwset_digest, Transaction, Version, WriteOp};

/// m-of-n signature requirement over a channel's designated endorsers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementPolicy {
    pub threshold_m: u32,
    pub out_of_n: u32,
}

/// Simple majority of n endorsers, the default policy.
pub fn default_threshold(n: usize) -> u32 {
    n.div_ceil(2) as u32
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("channel id must be non-empty")]
    EmptyChannelId,
    #[error("channel '{0}' has no members")]
    NoMembers(String),
    #[error("channel '{0}' has no endorsers")]
    NoEndorsers(String),
    #[error("endorser '{0}' is not a channel member")]
    EndorserNotMember(String),
    #[error("endorsement threshold {m} outside 1..={n}")]
    BadThreshold { m: u32, n: u32 },
}

/// Static description of one channel: who belongs, who endorses, how many
/// endorsements a transaction needs, and which contract is bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub channel_id: String,
    pub members: BTreeSet<String>,
    pub endorsers: BTreeSet<String>,
    pub threshold_m: u32,
    pub contract_name: String,
    pub contract_version: String,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.channel_id.is_empty() {
            return Err(ConfigError::EmptyChannelId);
        }
        if self.members.is_empty() {
            return Err(ConfigError::NoMembers(self.channel_id.clone()));
        }
        if self.endorsers.is_empty() {
            return Err(ConfigError::NoEndorsers(self.channel_id.clone()));
        }
        if let Some(stray) = self.endorsers.difference(&self.members).next() {
            return Err(ConfigError::EndorserNotMember(stray.clone()));
        }
        let n = self.endorsers.len() as u32;
        if self.threshold_m < 1 || self.threshold_m > n {
            return Err(ConfigError::BadThreshold { m: self.threshold_m, n });
        }
        Ok(())
    }

    pub fn is_member(&self, identity_id: &str) -> bool {
        self.members.contains(identity_id)
    }

    pub fn is_endorser(&self, identity_id: &str) -> bool {
        self.endorsers.contains(identity_id)
    }

    pub fn policy(&self) -> EndorsementPolicy {
        EndorsementPolicy { threshold_m: self.threshold_m, out_of_n: self.endorsers.len() as u32 }
    }
}

/// A client's signed invocation request. The digest covers every field
/// except the signature; `nonce` makes repeated invocations distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub channel_id: String,
    pub contract_name: String,
    pub contract_version: String,
    pub function: String,
    pub args: Vec<String>,
    pub proposer_id: String,
    pub nonce: u64,
    pub signature: Signature,
}

impl Proposal {
    pub fn digest(&self) -> Hash32 {
        proposal_digest(
            &self.channel_id,
            &self.contract_name,
            &self.contract_version,
            &self.function,
            &self.args,
            &self.proposer_id,
            self.nonce,
        )
    }

    pub fn sign(&mut self, msp: &Msp) -> Result<(), IdentityError> {
        self.signature = msp.sign(&self.proposer_id, &self.digest())?;
        Ok(())
    }

    pub fn verify(&self, msp: &Msp) -> bool {
        msp.verify_by(&self.proposer_id, &self.digest(), &self.signature)
    }

    /// Transaction id derived from the proposal content.
    pub fn tx_id(&self) -> String {
        format!("tx-{}", &hex::encode(self.digest())[..16])
    }
}

fn proposal_digest(
    channel_id: &str,
    contract_name: &str,
    contract_version: &str,
    function: &str,
    args: &[String],
    proposer_id: &str,
    nonce: u64,
) -> Hash32 {
    let mut enc = Encoder::new();
    enc.put_str(channel_id);
    enc.put_str(contract_name);
    enc.put_str(contract_version);
    enc.put_str(function);
    enc.put_count(args.len());
    for a in args {
        enc.put_str(a);
    }
    enc.put_str(proposer_id);
    enc.put_u64(nonce);
    sha256(&enc.finish())
}

/// Recompute the proposal digest a committed transaction's endorsements
/// were signed over; every input is carried by the transaction itself, so
/// endorsements stay verifiable from the block log alone.
pub fn proposal_digest_of_tx(tx: &Transaction) -> Hash32 {
    proposal_digest(
        &tx.channel_id,
        &tx.contract_name,
        &tx.contract_version,
        &tx.function,
        &tx.args,
        &tx.proposer_id,
        tx.timestamp,
    )
}

/// One endorser's signed simulation result. The signature covers the
/// proposal digest concatenated with the read/write-set digest, binding
/// the endorsement to both the request and its simulated effect.
#[derive(Debug, Clone, PartialEq)]
pub struct Endorsement {
    pub endorser_id: String,
    pub read_set: Vec<(String, Version)>,
    pub write_set: Vec<(String, WriteOp)>,
    pub signature: Signature,
}

impl Endorsement {
    pub fn message(proposal_digest: &Hash32, rwset: &Hash32) -> Vec<u8> {
        let mut m = Vec::with_capacity(64);
        m.extend_from_slice(proposal_digest);
        m.extend_from_slice(rwset);
        m
    }

    pub fn sign(
        msp: &Msp,
        endorser_id: &str,
        proposal_digest: &Hash32,
        read_set: Vec<(String, Version)>,
        write_set: Vec<(String, WriteOp)>,
    ) -> Result<Endorsement, IdentityError> {
        let digest = rwset_digest(&read_set, &write_set);
        let signature = msp.sign(endorser_id, &Self::message(proposal_digest, &digest))?;
        Ok(Endorsement { endorser_id: endorser_id.to_string(), read_set, write_set, signature })
    }

    pub fn rwset_digest(&self) -> Hash32 {
        rwset_digest(&self.read_set, &self.write_set)
    }

    pub fn verify(&self, msp: &Msp, proposal_digest: &Hash32) -> bool {
        let message = Self::message(proposal_digest, &self.rwset_digest());
        msp.verify_by(&self.endorser_id, &message, &self.signature)
    }
}

/// Ordering-service verdict over a set of endorsements.
#[derive(Debug, Clone, PartialEq)]
pub struct EndorsementCheck {
    /// threshold met by verifying signatures from distinct designated
    /// endorsers AND all endorsed rwset digests identical
    pub valid: bool,
    /// evidence of forgery: a present signature failed verification, or
    /// endorsements disagree on the simulated rwset
    pub tampered: Option<String>,
}

/// Validate endorsements the way the orderer does. Signatures that fail
/// to verify are tamper evidence; ids outside the designated endorser set
/// merely do not count toward the threshold.
pub fn check_endorsements(
    msp: &Msp,
    config: &ChannelConfig,
    proposal_digest: &Hash32,
    endorsements: &[Endorsement],
) -> EndorsementCheck {
    let mut tampered = None;
    let mut counted: BTreeSet<&str> = BTreeSet::new();
    let mut first_digest: Option<Hash32> = None;
    let mut digests_agree = true;
    for e in endorsements {
        let digest = e.rwset_digest();
        match first_digest {
            None => first_digest = Some(digest),
            Some(d) if d != digest => {
                digests_agree = false;
                if tampered.is_none() {
                    tampered =
                        Some(format!("endorsement from '{}' disagrees on rwset", e.endorser_id));
                }
            }
            Some(_) => {}
        }
        if !e.verify(msp, proposal_digest) {
            if tampered.is_none() {
                tampered = Some(format!(
                    "endorsement signature from '{}' failed verification",
                    e.endorser_id
                ));
            }
            continue;
        }
        if config.is_endorser(&e.endorser_id) {
            counted.insert(&e.endorser_id);
        }
    }
    let valid = digests_agree && counted.len() as u32 >= config.threshold_m;
    EndorsementCheck { valid, tampered }
}
