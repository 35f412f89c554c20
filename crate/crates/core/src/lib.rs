//! Desk-scale permissioned ledger for multi-site clinical trial data management.
//!
//! The network is partitioned into private channels, each with its own
//! hash-chained ledger, membership list, endorsement policy, and deterministic
//! smart contract. Contracts enforce the trial protocol: enrollment
//! eligibility, schedule-of-activities windows, consent-gated analysis access,
//! adverse-event tracking, and amendment version control. Everything is
//! replayable: logical clocks instead of wall time, deterministic signatures,
//! and content-addressed off-chain blobs.
//!
//! Module map:
//!
//! * [`identity`] — membership service provider; roles, keys, sign/verify
//! * [`ledger`] — hash-chained block log and derived world state
//! * [`channel`] — private channels and the propose/endorse/order/commit flow
//! * [`chaincode`] — deterministic contract runtime and lifecycle system channel
//! * [`protocol`] — machine-readable trial protocol (eligibility, schedule)
//! * [`records`] — clinical payloads (subjects, visits, adverse events, grants)
//! * [`contracts`] — the four channel-specific contract rule evaluators
//! * [`offchain`] — content-addressed encrypted blob store
//! * [`network`] — in-process multi-node network with an ordering service
//! * [`sim`] — fault injection: crash, recovery, state transfer, tampering
//! * [`trial`] — client-side orchestration of end-to-end trial operations
//! * [`audit`] — study report generation by transaction-log replay
//! * [`exec`] — parallel (rayon) and sequential multi-channel load execution

pub mod audit;
pub mod chaincode;
pub mod channel;
pub mod codec;
pub mod exec;
pub mod contracts;
pub mod identity;
pub mod ledger;
pub mod network;
pub mod offchain;
pub mod protocol;
pub mod records;
pub mod sim;
pub mod trial;

pub use identity::{Identity, Msp, Role};
pub use ledger::{Block, ChainVerdict, Ledger, Transaction, ValidityFlag};
