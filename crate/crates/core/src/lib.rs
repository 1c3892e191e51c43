//! Deterministic co-simulation of a 5G radio access network and distributed
//! grid-device control loops.
//!
//! The radio side models a gNodeB that collects buffer status reports, samples
//! a random time-varying channel, and grants resource blocks round robin. The
//! grid side runs coordinated set-point modulation (or a frequency-partitioned
//! central/local split) over first-order surrogate plants. [`engine::Engine`]
//! advances both in lock step, one TTI at a time.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the CLI and the
//! external plant bridge live in the `grid5g` companion crate.

#![no_std]
#![forbid(unsafe_code)]
// NaN must fail range checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod channel;
pub mod control;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod ran;
pub mod scenario;

pub use error::{Error, Result};

use core::fmt;

/// Zero-based index of a grid device. Displayed one-based (`DER 1`, `DER 2`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DerId(pub usize);

impl DerId {
    pub fn index(self) -> usize {
        self.0
    }

    /// One-based number used in scenario files and trace headers.
    pub fn number(self) -> usize {
        self.0 + 1
    }
}

impl fmt::Display for DerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DER {}", self.number())
    }
}
