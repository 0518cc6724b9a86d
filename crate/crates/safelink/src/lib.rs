//! IO, configuration, closed-loop simulation and batch workflows on top of
//! `safelink-core`.

pub mod archive;
pub mod bench;
pub mod config;
pub mod sim;
pub mod sweep;
pub mod verify;
pub mod workflow;

mod error;

pub use error::{Error, Result};
