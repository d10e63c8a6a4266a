//! Desk-scale laboratory for genie-aided nonlinear interference cancellation
//! in a single-span dual-polarization fiber link.
//!
//! The chain is: Gray 16QAM mapping and RRC shaping ([`sigproc`]),
//! split-step Manakov propagation and dispersion compensation ([`channel`]),
//! perturbative NLI modelling ([`frp`]), kernel learning ([`learn`]),
//! cancellation and soft metrics ([`rxdsp`]), LDPC coding ([`fec`]) and the
//! sweep harness behind the `nlilab` binary ([`experiment`]).

pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fec;
pub mod frp;
pub mod learn;
pub mod plot;
pub mod rxdsp;
pub mod sigproc;
pub mod spectral;
pub mod units;

pub use config::{FiberParams, LinkConfig, NoiseSpec};
pub use error::{NliError, Result};
pub use sigproc::{Constellation, DualPolSymbols, DualPolWaveform};
