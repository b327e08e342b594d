//! Correlated-mixture output heads for learning from corrupted targets.
//!
//! The crate is self-contained: a small reverse-mode tape ([`tape`]), the
//! Cholesky transform and its samplers ([`cholesky`]), the mixture head
//! ([`block`]), objectives ([`losses`]), model assembly ([`models`]),
//! datasets and corruption ([`data`]) and the optimization loop ([`train`]).

pub mod block;
pub mod checkpoint;
pub mod data;
pub mod cholesky;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use block::{CholeskyBlockConfig, CholeskyBlockParams, MixtureBatch, MixtureOutput};
pub use error::{Error, ErrorCategory, Result};
pub use rng::RngState;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
