//! Exact-arithmetic engine for q-series, indefinite theta functions and
//! wall-crossing sums on rational surfaces with b+ = 1.
//!
//! Everything is computed over Q(zeta8) with explicit truncation orders;
//! there is no floating point anywhere in the crate.

pub mod exactnum;
pub mod qseries;
pub mod modforms;
pub mod lattice;
pub mod theta;
pub mod donaldson;
pub mod cli;

use thiserror::Error;

/// Error taxonomy shared by the whole engine.
///
/// `OrderStarvation` means a coefficient beyond the tracked truncation was
/// requested; callers fix it by recomputing inputs at higher order, never by
/// assuming zeros.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("order starvation: {what} needs exponent {needed} but is only valid below {have}")]
    OrderStarvation { what: String, needed: i64, have: i64 },
    #[error("grid overflow: {0}")]
    GridOverflow(String),
    #[error("z pole below 1/z: {0}")]
    PoleFloor(String),
    #[error("indeterminate division: {0}")]
    IndeterminateDivision(String),
    #[error("unimplemented regime: {0}")]
    UnimplementedRegime(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("inconsistency: {0}")]
    Inconsistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
