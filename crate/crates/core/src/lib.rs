//! Matrix-aware optimization laboratory.
//!
//! This crate holds the pure algorithmic pieces: dense linear algebra,
//! polar factors and whitening transforms, the Muon / AdamW step rules and
//! their hybrid dispatcher, gradient-spectrum diagnostics, the data-side
//! training recipes, a small vision transformer with hand-written backward
//! passes, synthetic datasets, and executable checks of the linear-model
//! analysis of Muon under augmentation.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. Everything that touches the filesystem lives in the companion
//! `muonlab` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod orthogonalize;
pub mod param;
pub mod recipes;
pub mod rng;
pub mod spectral;
pub mod theory;
pub mod vit;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use linalg::{Matrix, SvdResult};
