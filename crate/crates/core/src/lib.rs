//! Federated learning for small consortia: an orchestrator ledger with
//! per-dataset permissioning, a content-addressed shared store, an
//! enclave-style secure aggregator that subsamples and forgets updates,
//! sealed transit encryption between workers and the aggregator, and an
//! audit trail that names round participants only by anonymous ids.

pub mod aggregator;
pub mod cryptokit;
pub mod error;
pub mod flcore;
pub mod harness;
pub mod ledger;
pub mod nodes;
pub mod store;

pub use error::{Error, Rejection, Result};
