//! Distributed importance filtering for IoT cells.
//!
//! Nodes observe a stream of unlabeled samples and decide online which ones
//! to send to an access point (AP). The AP labels what it receives, trains a
//! small feed-forward network, and periodically feeds back gradient-norm
//! leverage scores. Nodes estimate the score of a fresh sample by averaging
//! the scores of its nearest stored neighbours and transmit with an annealed
//! softmax probability calibrated to a target packet rate.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command-line front end live in the companion `impfilter` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod ap;
pub mod baselines;
pub mod bounds;
pub mod datasets;
pub mod energy;
mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
pub use linalg::Matrix;
