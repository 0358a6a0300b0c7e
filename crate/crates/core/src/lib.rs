//! Phasor-domain transient-stability simulation of AC systems with an
//! embedded VSC-HVDC link controlled to emulate an AC line.

pub mod acle;
pub mod error;
pub mod machine;
pub mod network;
pub mod powerflow;
pub mod scenario;
pub mod stability;
pub mod tds;
pub mod vsc;

pub use error::{Error, Result};
