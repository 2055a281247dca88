//! Open-set RF fingerprinting with neural carrier synchronization.
//!
//! The crate covers the whole pipeline: a synthetic impaired-transmitter
//! generator ([`signal`]), classical maximum-likelihood carrier
//! synchronization ([`sync`]), a small double-precision CNN framework
//! ([`nn`]), the trainable synchronization + fingerprint extractor
//! ([`rff`]), verification metrics ([`eval`]) and the experiment workflow
//! driven by the command-line tool ([`experiment`]).

// `!(x > 0.0)` is used deliberately so that NaN fails validation; index
// loops over parallel buffers read better than zipped iterators.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod rff;
pub mod rng;
pub mod signal;
pub mod sync;

pub use error::{Error, Result};
