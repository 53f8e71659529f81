//! System parameters for quorum-generalized DAG consensus.
//!
//! The validator count is always `n = k*f + 1` for a resilience parameter
//! `k >= 2` and fault bound `f >= 1`. The classical BFT setting is `k = 3`
//! (`n = 3f + 1`); smaller `k` trades safety/liveness margins for a smaller
//! committee, larger `k` buys probabilistic margin. Two quorum sizes fall out
//! of the parametrization:
//!
//! * a *strong quorum* of `(k-1)f + 1 = n - f` validators, used for round
//!   advancement and ordinary commit rules, and
//! * a *weak quorum* of `f + 1` validators, guaranteed to contain at least
//!   one honest member.
//!
//! Any two strong quorums intersect in at least `(k-2)f + 1` validators,
//! which is at least `f + 1` (one honest member) exactly when `k >= 3`. The
//! `k = 2` analyses elsewhere in this crate probe what breaks when that
//! intersection drops to a single, possibly faulty validator.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Index of a validator, in `0..n`. Kept as a bare `u8` because validators
/// are packed into bitmasks throughout the DAG layer (`n <= 16` for every
/// supported parametrization).
pub type ValidatorId = u8;

/// 1-based DAG round number.
pub type Round = u32;

/// 1-based wave number.
pub type Wave = u32;

/// Largest validator count supported by the bitmask representation.
pub const MAX_VALIDATORS: usize = 31;

/// Resilience parametrization `n = k*f + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Params {
    k: u32,
    f: u32,
}

/// Error for unsupported `(k, f)` combinations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BadParams {
    pub k: u32,
    pub f: u32,
    pub reason: &'static str,
}

impl fmt::Display for BadParams {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(out, "bad params k={} f={}: {}", self.k, self.f, self.reason)
    }
}

impl std::error::Error for BadParams {}

impl Params {
    /// Builds a parametrization, rejecting `k < 2`, `f < 1`, and committees
    /// too large for the bitmask DAG representation.
    pub fn new(k: u32, f: u32) -> Result<Self, BadParams> {
        if k < 2 {
            return Err(BadParams { k, f, reason: "k must be at least 2" });
        }
        if f < 1 {
            return Err(BadParams { k, f, reason: "f must be at least 1" });
        }
        let n = k * f + 1;
        if n as usize > MAX_VALIDATORS {
            return Err(BadParams { k, f, reason: "committee exceeds bitmask capacity" });
        }
        Ok(Params { k, f })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn f(&self) -> u32 {
        self.f
    }

    /// Total validator count `n = k*f + 1`.
    pub fn n(&self) -> u32 {
        self.k * self.f + 1
    }

    /// Strong quorum `(k-1)f + 1 = n - f`.
    pub fn strong_quorum(&self) -> u32 {
        (self.k - 1) * self.f + 1
    }

    /// Weak quorum `f + 1`.
    pub fn weak_quorum(&self) -> u32 {
        self.f + 1
    }

    /// Guaranteed overlap of any two strong quorums: `(k-2)f + 1`.
    pub fn quorum_intersection(&self) -> u32 {
        2 * self.strong_quorum() - self.n()
    }

    /// Iterator over all validator ids.
    pub fn validators(&self) -> impl Iterator<Item = ValidatorId> {
        0..self.n() as ValidatorId
    }
}
