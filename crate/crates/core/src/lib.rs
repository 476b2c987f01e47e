//! Prior-informed flow matching for graph reconstruction.
//!
//! Given a partially observed graph, a local edge-probability prior fills the
//! hidden node pairs, and a rectified flow learned on clean graphs transports
//! that estimate toward the data distribution. The crate covers the whole
//! pipeline: data and masks ([`data`]), the autodiff used by every model
//! ([`nn`]), the priors ([`priors`]), the flow itself ([`flow`]), evaluation
//! ([`metrics`]) and experiment orchestration ([`experiment`]).

pub mod data;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod priors;

pub(crate) mod par;

pub use error::{PifmError, Result};
pub use graph::{AdjacencyState, GraphRecord, NodePermutation, ObservationMask};
pub use linalg::Matrix;
