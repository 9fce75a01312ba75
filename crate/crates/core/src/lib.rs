//! Domain-attentive adapters for multi-domain and universal networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`graph`], [`ops`], [`gradcheck`]: dense tensors, a
//!   reverse-mode value graph and a central-difference gradient oracle.
//! * [`adapters`]: squeeze-and-excitation adapters, hard-switched adapter
//!   banks, the universal adapter bank and the domain-attention module.
//! * [`network`]: a small residual backbone with per-block adapter
//!   insertion, task heads, freezing and analysis probes.
//! * [`data`]: a deterministic synthetic multi-domain benchmark and the
//!   single-domain-per-batch sampler.
//! * [`trainer`]: SGD training across domains, evaluation (accuracy and
//!   AP@0.5), checkpoints and architecture comparisons.
//! * [`config`]: the JSON run configuration consumed by the `domattn` binary.
//!
//! See `examples/` for one runnable program per capability.

pub mod adapters;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
