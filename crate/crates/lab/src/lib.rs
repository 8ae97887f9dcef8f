//! Files, runs and command-line front end for `muonlab-core`.

pub mod binfmt;
pub mod error;
pub mod schedules;
pub mod store;

pub use error::{LabError, Result};
pub mod dataset_io;
pub mod config;
pub mod run;
pub mod verify;
pub mod cli;
