//! Round-based DAG BFT with generalized quorum sizes.
//!
//! The system size is parameterized as `n = k*f + 1` for a resilience
//! divisor `k >= 2`, instead of the classical `n = 3f + 1`. The crate
//! provides the shared DAG/coin/broadcast substrate, four wave-based commit
//! rules on top of it, a discrete-event simulator with adversarial delivery
//! schedules, scripted counterexample scenarios, and analytic plus
//! Monte-Carlo commit-probability estimates.

pub mod analysis;
pub mod broadcast;
pub mod coin;
pub mod dag;
pub mod params;
pub mod protocols;
pub mod scenarios;
pub mod sim;

pub use coin::CoinRegistry;
pub use dag::{LocalDag, SourceSet, Vertex, VertexId};
pub use params::{Params, Round, ValidatorId, Wave};
pub use protocols::{
    CommitEntry, CommitKind, CommitRecord, LeaderRole, LeaderSlot, ProtocolKind, ProtocolState,
    StateOptions, Violation, VoterType,
};
