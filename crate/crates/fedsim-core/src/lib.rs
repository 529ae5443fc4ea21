//! Deterministic federated-learning simulation kernels.
//!
//! The crate is organized as a pipeline of pure functions over explicit
//! state values: a synthetic domain-grid dataset ([`dataset`]), client
//! partitioning under three distributions ([`partition`]), a small
//! per-pixel classifier with first-class batch-normalization statistics
//! ([`model`]), federated rounds with pluggable server optimizers
//! ([`federation`]), and segmentation metrics with two inference
//! strategies ([`eval`]).
//!
//! Every stochastic choice draws from a [`rng::StreamRng`] derived from
//! `(seed, stage label, substream indices)`, so identical inputs always
//! produce bit-identical outputs. No function mutates its inputs unless
//! it takes `&mut`; nothing here performs IO.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! only adds `std::error::Error` for the error type.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod eval;
pub mod federation;
pub mod model;
pub mod partition;
pub mod rng;

pub use error::{Error, Result};
