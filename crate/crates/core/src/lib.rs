//! Continuous-time graph convolution for emotion recognition in conversations.
//!
//! Utterance features from three modalities are encoded, fused by attention
//! and propagated over a similarity graph by linear graph ODEs
//! `dH/dt = ln Â·H + H·Ω + E`. A static block uses trained log-space weights
//! `Ω_s`; a dynamic block mixes a learned bank of log-space weights with a
//! selection vector generated from a global summary of the conversation, so
//! every conversation integrates under its own `Ω_d`.
//!
//! The crate is `no_std` (it needs `alloc`). Gradients come from the
//! reverse-mode [`tape`], which records RK4 stages directly.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod activation;
pub mod batchnorm;
pub mod conversation;
pub mod dgcode;
pub mod encoder;
pub mod error;
pub mod giv;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod ode;
pub mod params;
pub mod sgcode;
pub mod tape;

pub use error::{Error, Result};
pub use matrix::Matrix;
