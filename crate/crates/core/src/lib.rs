//! Deterministic LDACS baseband laboratory.
//!
//! CP-OFDM, WOLA-OFDM and filtered OFDM transceiver chains in frame mode and
//! in a cycle-stepped stream mode, with the channel, interference and
//! measurement models needed to compare them.

pub mod channel;
pub mod coding;
pub mod error;
pub mod experiment;
pub mod filter_design;
pub mod framing;
pub mod metrics;
pub mod numeric;
pub mod stream;
pub mod waveforms;

pub use error::{Error, Result};
