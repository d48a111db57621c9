//! Two-stage air traffic planning with weakly supervised aircraft.
//!
//! The ATC stage designs, for every aircraft, a corridor of disks (one per
//! timestep) that keeps all aircraft separated while leaving pilots as much
//! room as possible. The pilot stage then picks, independently per aircraft,
//! a low-effort trajectory inside its corridor under known wind.

#![allow(clippy::needless_range_loop)]

pub mod atc;
pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod nlp;
pub mod orchestrator;
pub mod pilot;
mod serde_float;
pub mod synth;

pub use error::{Error, Result};
