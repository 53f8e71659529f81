//! Round-structured local DAGs.
//!
//! Every validator maintains its own copy of the DAG. Vertices are keyed by
//! `(round, source)`; the broadcast layer guarantees at most one vertex per
//! key, so a vertex's parents can be stored as a bitmask of sources in the
//! previous round. A vertex in round `r >= 2` must reference at least a
//! strong quorum of round `r-1` vertices.
//!
//! Vertices may arrive out of causal order; `LocalDag::add_vertex` buffers a
//! vertex until all of its parents are present, so the set of *inserted*
//! vertices is always causally closed and insertion order never changes the
//! resulting DAG.

use crate::params::{Params, Round, ValidatorId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Set of validator ids packed into a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceSet(pub u32);

impl SourceSet {
    pub fn empty() -> Self {
        SourceSet(0)
    }

    pub fn singleton(v: ValidatorId) -> Self {
        SourceSet(1 << v)
    }

    pub fn insert(&mut self, v: ValidatorId) {
        self.0 |= 1 << v;
    }

    pub fn remove(&mut self, v: ValidatorId) {
        self.0 &= !(1 << v);
    }

    pub fn contains(&self, v: ValidatorId) -> bool {
        self.0 & (1 << v) != 0
    }

    pub fn len(&self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn union(&self, other: SourceSet) -> SourceSet {
        SourceSet(self.0 | other.0)
    }

    pub fn is_subset(&self, other: SourceSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        (0..32u8).filter(move |v| self.contains(*v))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_iter<I: IntoIterator<Item = ValidatorId>>(items: I) -> Self {
        let mut s = SourceSet::empty();
        for v in items {
            s.insert(v);
        }
        s
    }
}

/// A DAG vertex. `parents` refers to sources in round `round - 1`; round-1
/// vertices have no parents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub source: ValidatorId,
    pub round: Round,
    pub parents: SourceSet,
    /// Stand-in for a block payload digest; only used to detect conflicting
    /// vertices for the same `(round, source)` key.
    pub payload: u64,
}

/// Key of a vertex inside a local DAG.
pub type VertexId = (Round, ValidatorId);

impl Vertex {
    pub fn id(&self) -> VertexId {
        (self.round, self.source)
    }
}

/// Result of offering a vertex to a local DAG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AddOutcome {
    /// The vertex (and possibly previously buffered descendants) became part
    /// of the DAG. The inserted vertices are listed in insertion order.
    Inserted(Vec<Vertex>),
    /// Some parent is missing; the vertex is buffered until it arrives.
    Buffered,
    /// Structurally invalid or conflicting with an existing vertex.
    Rejected(RejectReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    /// Fewer than a strong quorum of parents (round >= 2), or parents on a
    /// round-1 vertex, or an out-of-range source.
    InvalidShape,
    /// A different vertex with the same `(round, source)` key is present.
    Equivocation,
    /// Identical vertex already inserted or buffered.
    Duplicate,
}

/// One validator's view of the DAG.
#[derive(Clone, Debug)]
pub struct LocalDag {
    params: Params,
    /// `rounds[r - 1][source]` holds the vertex of `source` at round `r`.
    rounds: Vec<Vec<Option<Vertex>>>,
    /// Vertices waiting for missing parents.
    pending: Vec<Vertex>,
}

impl LocalDag {
    pub fn new(params: Params) -> Self {
        LocalDag { params, rounds: Vec::new(), pending: Vec::new() }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Highest round with at least one inserted vertex (0 when empty).
    pub fn max_round(&self) -> Round {
        let mut r = self.rounds.len() as Round;
        while r > 0 && self.round_sources(r).is_empty() {
            r -= 1;
        }
        r
    }

    pub fn get(&self, round: Round, source: ValidatorId) -> Option<&Vertex> {
        self.rounds
            .get(round as usize - 1)?
            .get(source as usize)?
            .as_ref()
    }

    pub fn contains(&self, round: Round, source: ValidatorId) -> bool {
        round >= 1 && self.get(round, source).is_some()
    }

    /// Sources with an inserted vertex at `round`.
    pub fn round_sources(&self, round: Round) -> SourceSet {
        let mut set = SourceSet::empty();
        if round == 0 {
            return set;
        }
        if let Some(slots) = self.rounds.get(round as usize - 1) {
            for v in slots.iter().flatten() {
                set.insert(v.source);
            }
        }
        set
    }

    /// Number of vertices inserted at `round`.
    pub fn round_len(&self, round: Round) -> u32 {
        self.round_sources(round).len()
    }

    fn validate(&self, v: &Vertex) -> Result<(), RejectReason> {
        if v.source as u32 >= self.params.n() || v.round == 0 {
            return Err(RejectReason::InvalidShape);
        }
        if v.round == 1 {
            if !v.parents.is_empty() {
                return Err(RejectReason::InvalidShape);
            }
        } else if v.parents.len() < self.params.strong_quorum()
            || v.parents.iter().any(|p| p as u32 >= self.params.n())
        {
            return Err(RejectReason::InvalidShape);
        }
        Ok(())
    }

    fn parents_present(&self, v: &Vertex) -> bool {
        v.round == 1 || v.parents.iter().all(|p| self.contains(v.round - 1, p))
    }

    fn insert(&mut self, v: Vertex) {
        let idx = v.round as usize - 1;
        if self.rounds.len() <= idx {
            self.rounds.resize(idx + 1, vec![None; self.params.n() as usize]);
        }
        self.rounds[idx][v.source as usize] = Some(v);
    }

    /// Test/diagnostic escape hatch: insert without shape validation or
    /// parent buffering. Used to build deliberately malformed DAGs when
    /// exercising the analysis checkers.
    pub fn insert_unchecked(&mut self, v: Vertex) {
        self.insert(v);
    }

    /// Offers a vertex. Returns the list of vertices actually inserted
    /// (the offered one plus any buffered vertices it unblocked).
    pub fn add_vertex(&mut self, v: Vertex) -> AddOutcome {
        if let Err(reason) = self.validate(&v) {
            return AddOutcome::Rejected(reason);
        }
        if let Some(existing) = self.get(v.round, v.source) {
            return if *existing == v {
                AddOutcome::Rejected(RejectReason::Duplicate)
            } else {
                AddOutcome::Rejected(RejectReason::Equivocation)
            };
        }
        if self.pending.contains(&v) {
            return AddOutcome::Rejected(RejectReason::Duplicate);
        }
        if self.pending.iter().any(|p| p.id() == v.id()) {
            return AddOutcome::Rejected(RejectReason::Equivocation);
        }
        if !self.parents_present(&v) {
            self.pending.push(v);
            return AddOutcome::Buffered;
        }
        let mut inserted = vec![v];
        self.insert(v);
        // Unblock buffered vertices; repeat until a fixpoint since inserting
        // one buffered vertex can release another.
        loop {
            let mut progressed = false;
            let mut i = 0;
            while i < self.pending.len() {
                if self.parents_present(&self.pending[i]) {
                    let w = self.pending.remove(i);
                    self.insert(w);
                    inserted.push(w);
                    progressed = true;
                } else {
                    i += 1;
                }
            }
            if !progressed {
                break;
            }
        }
        AddOutcome::Inserted(inserted)
    }

    /// Sources whose round-`target` vertices are ancestors of `from`
    /// (inclusive: if `from.0 == target` the result is `{from.1}`).
    ///
    /// Computed by walking the parent bitmasks down one round at a time;
    /// every visited vertex is present because inserted vertices are
    /// causally closed.
    pub fn ancestors_at(&self, from: VertexId, target: Round) -> SourceSet {
        let (round, source) = from;
        if target > round || target == 0 || !self.contains(round, source) {
            return SourceSet::empty();
        }
        let mut frontier = SourceSet::singleton(source);
        let mut r = round;
        while r > target {
            let mut next = SourceSet::empty();
            for s in frontier.iter() {
                if let Some(v) = self.get(r, s) {
                    next = next.union(v.parents);
                }
            }
            frontier = next;
            r -= 1;
        }
        frontier
    }

    /// True when there is a parent-edge path from `u` down to `v` (or
    /// `u == v`). Both endpoints must be inserted.
    pub fn strong_path(&self, u: VertexId, v: VertexId) -> bool {
        if !self.contains(u.0, u.1) || !self.contains(v.0, v.1) {
            return false;
        }
        self.ancestors_at(u, v.0).contains(v.1)
    }

    /// All vertices in the causal history of `v` (including `v`), as ids.
    pub fn causal_history(&self, v: VertexId) -> Vec<VertexId> {
        let mut out = Vec::new();
        if !self.contains(v.0, v.1) {
            return out;
        }
        let mut frontier = SourceSet::singleton(v.1);
        let mut r = v.0;
        while r >= 1 && !frontier.is_empty() {
            let mut next = SourceSet::empty();
            for s in frontier.iter() {
                out.push((r, s));
                if let Some(w) = self.get(r, s) {
                    next = next.union(w.parents);
                }
            }
            frontier = next;
            r -= 1;
        }
        out.sort();
        out
    }

    /// Deterministic linearization of a sequence of committed leaders: for
    /// each leader in order, its not-yet-emitted causal history is appended,
    /// sorted by `(round, source)`. `emitted` carries state across calls so
    /// incremental commits extend a single total order.
    pub fn linearize_history(
        &self,
        leaders: &[VertexId],
        emitted: &mut BTreeSet<VertexId>,
    ) -> Vec<VertexId> {
        let mut out = Vec::new();
        for leader in leaders {
            let mut batch: Vec<VertexId> = self
                .causal_history(*leader)
                .into_iter()
                .filter(|id| !emitted.contains(id))
                .collect();
            batch.sort();
            for id in &batch {
                emitted.insert(*id);
            }
            out.extend(batch);
        }
        out
    }

    /// All inserted vertices, sorted by `(round, source)`.
    pub fn vertices(&self) -> Vec<&Vertex> {
        let mut out = Vec::new();
        for slots in &self.rounds {
            for v in slots.iter().flatten() {
                out.push(v);
            }
        }
        out.sort_by_key(|v| (v.round, v.source));
        out
    }

    /// JSON snapshot of the DAG: a list of vertices with explicit parent
    /// source lists.
    pub fn snapshot(&self) -> serde_json::Value {
        let vertices: Vec<serde_json::Value> = self
            .vertices()
            .iter()
            .map(|v| {
                serde_json::json!({
                    "source": v.source,
                    "round": v.round,
                    "parents": v.parents.iter().collect::<Vec<_>>(),
                    "payload": format!("{:016x}", v.payload),
                })
            })
            .collect();
        serde_json::json!({
            "n": self.params.n(),
            "k": self.params.k(),
            "f": self.params.f(),
            "vertices": vertices,
        })
    }
}
