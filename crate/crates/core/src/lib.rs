//! Discrete-round simulator of federated learning over air-ground integrated
//! networks.
//!
//! Terrestrial (or aerial) clients train a shared model with FedAvg while a
//! parameter server, usually a hovering UAV, broadcasts the global model and
//! aggregates the local updates. Every round is timed through a Shannon-rate
//! link model and charged against an energy ledger, so the server's hovering
//! location shows up directly in energy use and, under an energy budget, in
//! the accuracy that training can reach.
//!
//! Module map:
//!
//! - [`model`]: logistic regression / one-hidden-layer MLP with mini-batch SGD.
//! - [`data`]: IDX (MNIST) loading, synthetic blobs, IID and sharded partitions.
//! - [`fedavg`]: client selection, weighted aggregation, the round loop.
//! - [`channel`]: link rates and transmission times.
//! - [`energy`]: round timing, UAV/user energy, budget halting.
//! - [`placement`]: minimum sum-of-distances hovering point, random baseline,
//!   grid oracle.
//! - [`scenario`]: topology forms and seeded multi-repeat experiments.

pub mod channel;
pub mod data;
pub mod energy;
pub mod error;
pub mod fedavg;
pub mod model;
pub mod oracle;
pub mod placement;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
