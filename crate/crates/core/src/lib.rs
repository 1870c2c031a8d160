//! Deterministic engine for embedding convolutional networks into
//! exactly-equivalent fully-connected networks and studying what training
//! does to them afterwards.
//!
//! The crate is organised around a small number of ideas:
//!
//! * **Models are data.** A [`nn::ModelSpec`] is a plain list of layer
//!   descriptions; parameters live in a flat [`params::ParamVector`] whose
//!   layout is derived from the spec. Everything — training, embedding,
//!   probes, checkpoints — moves these two values around.
//! * **Embedding is a linear map with bookkeeping.** [`embed::embed`] turns a
//!   CNN parameter vector into the weights of a dense network with identical
//!   outputs, and [`embed::EmbeddingMap`] remembers which dense entries the
//!   convolution actually touched (the *local* part) so deviation from the
//!   embedding subspace can be measured later.
//! * **Bitwise determinism.** All randomness flows through
//!   [`rng::DetRng`] (ChaCha8 with per-purpose streams) and every reduction
//!   uses a fixed summation order, so a (seed, config) pair reproduces runs
//!   exactly — including across snapshot save/restore.
//!
//! The heavier experiment drivers ([`train::relax_protocol`], the string
//! method in [`interp`]) are compositions of the public primitives and stay
//! deterministic for the same reason the primitives do.

pub mod checkpoint;
pub mod data;
pub mod embed;
pub mod error;
pub mod interp;
pub mod nn;
pub mod params;
pub mod probes;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use params::{ParamKind, ParamLayout, ParamVector};
pub use tensor::Tensor;
