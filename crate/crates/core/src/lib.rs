//! Episodic meta-learning engine for few-shot adaptation of a binary
//! bonafide/spoof detector to unseen attack domains.
//!
//! The crate trains a small embedding MLP over fixed-dimensional feature
//! vectors with two meta-learning strategies — prototypical networks and
//! prototype-initialized MAML — and evaluates few-shot adaptation with the
//! equal error rate metric. All arithmetic is 64-bit and every random choice
//! flows from an explicit seed, so training logs, sweeps, and score files are
//! reproducible byte for byte.

pub mod backbone;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod optim;
pub mod protomaml;
pub mod protonet;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, NodeId, Tensor};
