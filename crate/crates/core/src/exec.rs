//! Load generator for multi-channel commit throughput.
//!
//! Channels share no state, so the commit pipeline treats each one as a
//! lane: propose, endorse, verify, batch into blocks. Lanes touch only
//! the shared identity directory, which makes them safe to run side by
//! side. With the `parallel` feature the lanes fan out across a rayon
//! pool; without it the same loop runs one lane at a time.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{check_endorsements, ChannelConfig, Endorsement, Proposal};
use crate::identity::{Msp, Role, Signature};
use crate::ledger::{Ledger, Transaction, TxEndorsement, ValidityFlag, WriteOp};
use crate::network::BATCH_SIZE;

/// Outcome of one load run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub channels: usize,
    pub txs_per_channel: usize,
    /// Whether lanes actually ran side by side. False when the parallel
    /// feature is compiled out, whatever the caller asked for.
    pub parallel: bool,
    pub elapsed_secs: f64,
    pub total_txs: usize,
    pub tps: f64,
}

pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

fn loader_id(lane: usize) -> String {
    format!("loader-{lane}")
}

fn lane_config(lane: usize) -> ChannelConfig {
    let loader = loader_id(lane);
    ChannelConfig {
        channel_id: format!("bench-{lane}"),
        members: BTreeSet::from([loader.clone()]),
        endorsers: BTreeSet::from([loader]),
        threshold_m: 1,
        contract_name: "bench".to_string(),
        contract_version: "1.0".to_string(),
    }
}

/// Drives one channel through the full commit path: signed proposal,
/// signed endorsement over the simulated rwset, policy check, block
/// batching. Keys are unique per transaction so no commit conflicts.
fn run_lane(msp: &Msp, lane: usize, txs: usize) -> Ledger {
    let config = lane_config(lane);
    let loader = loader_id(lane);
    let mut ledger = Ledger::new(&config.channel_id);
    let mut batch: Vec<Transaction> = Vec::with_capacity(BATCH_SIZE);
    for j in 0..txs {
        let mut proposal = Proposal {
            channel_id: config.channel_id.clone(),
            contract_name: config.contract_name.clone(),
            contract_version: config.contract_version.clone(),
            function: "put".to_string(),
            args: vec![format!("k/{j}")],
            proposer_id: loader.clone(),
            nonce: j as u64,
            signature: Signature(vec![]),
        };
        proposal.sign(msp).expect("loader is enrolled");
        let digest = proposal.digest();
        let mut value = format!("bench-{lane}-{j}-").into_bytes();
        value.resize(96, b'x');
        let write_set = vec![(format!("k/{j}"), WriteOp::Put(value))];
        let endorsement = Endorsement::sign(msp, &loader, &digest, Vec::new(), write_set.clone())
            .expect("loader is enrolled");
        let check = check_endorsements(msp, &config, &digest, std::slice::from_ref(&endorsement));
        assert!(check.valid, "bench endorsement must verify");
        batch.push(Transaction {
            tx_id: proposal.tx_id(),
            channel_id: proposal.channel_id.clone(),
            contract_name: proposal.contract_name.clone(),
            contract_version: proposal.contract_version.clone(),
            function: proposal.function.clone(),
            args: proposal.args.clone(),
            proposer_id: proposal.proposer_id.clone(),
            read_set: Vec::new(),
            write_set,
            endorsements: vec![TxEndorsement {
                endorser_id: endorsement.endorser_id.clone(),
                signature: endorsement.signature.clone(),
            }],
            timestamp: j as u64,
            validity: ValidityFlag::Valid,
        });
        if batch.len() == BATCH_SIZE {
            ledger.append_block(std::mem::take(&mut batch));
        }
    }
    if !batch.is_empty() {
        ledger.append_block(batch);
    }
    ledger
}

#[cfg(feature = "parallel")]
fn run_lanes(msp: &Msp, channels: usize, txs: usize, parallel: bool) -> Vec<Ledger> {
    if parallel {
        use rayon::prelude::*;
        (0..channels).into_par_iter().map(|lane| run_lane(msp, lane, txs)).collect()
    } else {
        (0..channels).map(|lane| run_lane(msp, lane, txs)).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_lanes(msp: &Msp, channels: usize, txs: usize, _parallel: bool) -> Vec<Ledger> {
    (0..channels).map(|lane| run_lane(msp, lane, txs)).collect()
}

/// Runs the load and times nothing but the lanes themselves. Every
/// produced chain is verified after the clock stops.
pub fn run_bench_load(channels: usize, txs_per_channel: usize, parallel: bool) -> BenchReport {
    let parallel = parallel && parallel_available();
    let msp = Msp::new();
    for lane in 0..channels {
        msp.enroll(&loader_id(lane), Role::CoordinatingCenter, None).expect("fresh directory");
    }
    let start = Instant::now();
    let ledgers = run_lanes(&msp, channels, txs_per_channel, parallel);
    let elapsed_secs = start.elapsed().as_secs_f64();
    for ledger in &ledgers {
        let verdict = ledger.verify_chain();
        assert!(verdict.valid, "bench chain broke: {}", verdict.reason);
    }
    let total_txs = channels * txs_per_channel;
    BenchReport {
        channels,
        txs_per_channel,
        parallel,
        elapsed_secs,
        total_txs,
        tps: total_txs as f64 / elapsed_secs.max(1e-9),
    }
}
