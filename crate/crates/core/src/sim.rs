//! Fault injection for crash/recovery runs: declarative crash and
//! recovery schedules keyed to the network's logical tick, plus direct
//! replica corruption for exercising tamper detection during state
//! transfer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ledger::WriteOp;
use crate::network::{NetError, Network, NodeStatus, ORDERER_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultAction {
    Crash,
    Recover,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub tick: u64,
    pub action: FaultAction,
    pub node_id: String,
}

/// A list of crash/recovery events, serialized as a bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultSchedule {
    pub events: Vec<FaultEvent>,
}

impl FaultSchedule {
    pub fn from_json(json: &str) -> Result<FaultSchedule, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn load(path: &Path) -> Result<FaultSchedule, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(std::io::Error::other)
    }

    /// Apply every event scheduled for exactly `tick`, in list order.
    /// Returns the events applied.
    pub fn apply_due(&self, net: &mut Network, tick: u64) -> Result<Vec<FaultEvent>, NetError> {
        let mut applied = Vec::new();
        for event in self.events.iter().filter(|e| e.tick == tick) {
            match event.action {
                FaultAction::Crash => net.crash_node(&event.node_id)?,
                FaultAction::Recover => net.recover_node(&event.node_id)?,
            }
            applied.push(event.clone());
        }
        Ok(applied)
    }
}

/// Flip one byte inside the first put value found in the block at
/// `height` on one node's replica, leaving the stored block hash stale.
/// Returns false if there was nothing to corrupt. The replica will fail
/// chain verification from that height on, and other nodes reject its
/// blocks during state transfer.
pub fn corrupt_tx_value(
    net: &mut Network,
    node_id: &str,
    channel_id: &str,
    height: u64,
) -> bool {
    let Some(ledger) = net.node_ledger_mut(node_id, channel_id) else {
        return false;
    };
    let Some(block) = ledger.blocks_mut().get_mut(height as usize) else {
        return false;
    };
    for tx in &mut block.tx_list {
        for (_, op) in &mut tx.write_set {
            if let WriteOp::Put(value) = op {
                if let Some(byte) = value.first_mut() {
                    *byte ^= 0x01;
                    return true;
                }
            }
        }
    }
    false
}

/// Hex head hash of every up replica of a channel (members plus the
/// orderer), keyed by node id. Convergence means one distinct value.
pub fn head_hashes(net: &Network, channel_id: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let Some(config) = net.channel_config(channel_id) else {
        return out;
    };
    let ids = config.members.iter().map(String::as_str).chain([ORDERER_ID]);
    for id in ids {
        if net.node_status(id) != Some(NodeStatus::Up) {
            continue;
        }
        if let Ok(ledger) = net.node_ledger(id, channel_id) {
            out.insert(id.to_string(), hex::encode(ledger.head_hash()));
        }
    }
    out
}
