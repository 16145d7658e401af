//! Sparse-CDMA multiuser detection on the noiseless channel.
//!
//! The crate samples sparse spreading codes ([`ensemble`]), superimposes the
//! users' BPSK bits into chip signals ([`channel`]) and decodes them by unit
//! clause propagation with random guessing and contradiction tracking
//! ([`ucp`]). Small instances can be checked exhaustively ([`oracle`]).
//! The [`asymptotics`] module integrates the mean-field equations that
//! predict where the deterministic phase of the decoder ends, and
//! [`experiments`] runs seeded Monte Carlo batches to compare the two.

pub mod asymptotics;
pub mod channel;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod oracle;
pub mod ucp;

pub use error::{Error, Result};
