//! Scripted adversarial schedules replayed through real protocol machines.
//!
//! A scenario fixes, per validator and round, exactly which vertices the
//! validator's next vertex references. The replay driver feeds each machine
//! the global vertex pool in causal order; a scripted machine waits until
//! its designated parents are present and then advances with exactly that
//! set, so the resulting DAG — and all commit decisions derived from it —
//! is reproduced bit for bit.
//!
//! Two constructions live here:
//!
//! * [`tusk_liveness_scenario`] — a `k = 2` Tusk schedule (`n = 7`,
//!   `f = 3`) in which the Byzantine minority only speaks at odd rounds, so
//!   every even round carries exactly four vertices whose leader edges are
//!   spread such that no validator ever reaches the `f + 1 = 4` direct
//!   votes. The same DAG evaluated with `k = 3` (`n = 3*2 + 1`, threshold
//!   `3`) has committable leaders, which [`tusk_liveness_contrast`]
//!   quantifies.
//! * [`bullshark_safety_scenario`] — a `k = 2` asynchronous Bullshark
//!   schedule (`n = 5`, `f = 2`) that drives one validator's indirect rule
//!   into simultaneous steady-state and fallback certification of wave 2.
//!   Either resolution of the tie disagrees with some honest validator that
//!   committed the other leader directly, so the run demonstrates an actual
//!   ordering split, not just a latent ambiguity.

use crate::coin::CoinRegistry;
use crate::dag::{SourceSet, Vertex, VertexId};
use crate::params::{Params, Round, ValidatorId, Wave};
use crate::protocols::{
    ParentPolicy, ProtoOutput, ProtocolKind, ProtocolState, StateOptions, Violation, VoterType,
};
use std::collections::{BTreeMap, BTreeSet};

/// A fully scripted execution.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub params: Params,
    pub kind: ProtocolKind,
    /// Per honest validator: parent set of its vertex at each round >= 2.
    pub scripts: BTreeMap<ValidatorId, BTreeMap<Round, SourceSet>>,
    /// Injected Byzantine vertices: `(source, round)` to parent set.
    pub byz: BTreeMap<(ValidatorId, Round), SourceSet>,
    pub coin_overrides: BTreeMap<Wave, ValidatorId>,
    /// Ambiguity resolution forced upon specific validators.
    pub forced_arm: BTreeMap<ValidatorId, VoterType>,
    pub seed: u64,
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub params: Params,
    pub states: BTreeMap<ValidatorId, ProtocolState>,
    pub violations: Vec<(ValidatorId, Violation)>,
}

fn payload(seed: u64, source: ValidatorId, round: Round) -> u64 {
    let mut x = seed ^ ((source as u64) << 8) ^ ((round as u64) << 40);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^ (x >> 31)
}

/// Replays the scenario to quiescence: materializes Byzantine vertices as
/// their parents appear, delivers the pool to every machine in `(round,
/// source)` order, and loops until nothing moves.
pub fn replay(sc: &Scenario) -> ScenarioOutcome {
    let mut coin = CoinRegistry::new(sc.params, sc.seed);
    for (w, v) in &sc.coin_overrides {
        coin.override_wave(*w, *v);
    }
    let mut machines: BTreeMap<ValidatorId, ProtocolState> = BTreeMap::new();
    let mut pool: BTreeMap<VertexId, Vertex> = BTreeMap::new();
    let mut delivered: BTreeMap<ValidatorId, BTreeSet<VertexId>> = BTreeMap::new();
    for (&id, script) in &sc.scripts {
        for (round, want) in script {
            assert!(*round >= 2);
            assert!(
                want.len() >= sc.params.strong_quorum() && want.contains(id),
                "script for {id} round {round} is not a valid own-inclusive quorum"
            );
        }
        let opts = StateOptions {
            auto_timeouts: true,
            forced_arm: sc.forced_arm.get(&id).copied(),
            reanchor: true,
            parent_policy: ParentPolicy::Scripted(script.clone()),
            seed: sc.seed,
        };
        let (st, v0) = ProtocolState::new(sc.params, sc.kind, id, opts);
        pool.insert(v0.id(), v0);
        delivered.entry(id).or_default().insert(v0.id());
        machines.insert(id, st);
    }
    let mut event = 0u64;
    loop {
        let mut progress = false;
        // Materialize Byzantine vertices whose parents all exist.
        for (&(src, round), &parents) in &sc.byz {
            if pool.contains_key(&(round, src)) {
                continue;
            }
            let ready =
                round == 1 || parents.iter().all(|p| pool.contains_key(&(round - 1, p)));
            if ready {
                let v = Vertex {
                    source: src,
                    round,
                    parents,
                    payload: payload(sc.seed, src, round),
                };
                pool.insert(v.id(), v);
                progress = true;
            }
        }
        // Deliver the pool, in causal order, to every machine.
        let snapshot: Vec<Vertex> = pool.values().copied().collect();
        let ids: Vec<ValidatorId> = machines.keys().copied().collect();
        for id in ids {
            let seen = delivered.entry(id).or_default();
            let todo: Vec<Vertex> = snapshot
                .iter()
                .filter(|v| !seen.contains(&v.id()))
                .copied()
                .collect();
            for v in todo {
                delivered.get_mut(&id).unwrap().insert(v.id());
                event += 1;
                let m = machines.get_mut(&id).unwrap();
                let outs = m.deliver(v, &mut coin, event);
                for o in outs {
                    if let ProtoOutput::Broadcast(nv) = o {
                        pool.insert(nv.id(), nv);
                        delivered.get_mut(&id).unwrap().insert(nv.id());
                    }
                }
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }
    let mut violations = Vec::new();
    for (id, m) in &machines {
        for v in &m.violations {
            violations.push((*id, *v));
        }
    }
    ScenarioOutcome { params: sc.params, states: machines, violations }
}

fn set(xs: &[ValidatorId]) -> SourceSet {
    SourceSet::from_iter(xs.iter().copied())
}

/// Parent sets of the four even-round vertices in the Tusk liveness
/// schedule: validator `i`'s even-round vertex references `EVEN_PARENTS[i]`.
/// Each set is an own-inclusive strong quorum, and no validator appears in
/// more than three of them, so no leader ever collects `f + 1 = 4` votes.
pub const TUSK_EVEN_PARENTS: [[ValidatorId; 4]; 4] =
    [[0, 1, 4, 5], [1, 2, 5, 6], [2, 3, 4, 6], [0, 3, 4, 5]];

/// Tusk under `n = 2f + 1 = 7`: the honest validators `{0..3}` run forever
/// without a single commit. Byzantine validators `{4, 5, 6}` broadcast only
/// at odd rounds (always referencing the four honest even-round vertices),
/// so every even round — the vote round of some wave — contains exactly the
/// four honest vertices, whose leader edges are spread per
/// [`TUSK_EVEN_PARENTS`]. All wave coins are pinned to validator 4, a
/// maximum-support leader, to show that even the best possible coin outcome
/// commits nothing.
pub fn tusk_liveness_scenario(waves: u32) -> Scenario {
    let params = Params::new(2, 3).unwrap();
    let honest: [ValidatorId; 4] = [0, 1, 2, 3];
    let last_round = 2 * waves + 2;
    let mut scripts: BTreeMap<ValidatorId, BTreeMap<Round, SourceSet>> = BTreeMap::new();
    for (i, &id) in honest.iter().enumerate() {
        let mut s = BTreeMap::new();
        for r in 2..=last_round {
            let parents = if r % 2 == 0 {
                set(&TUSK_EVEN_PARENTS[i])
            } else {
                set(&honest)
            };
            s.insert(r, parents);
        }
        scripts.insert(id, s);
    }
    let mut byz = BTreeMap::new();
    for b in [4u8, 5, 6] {
        let mut r = 1;
        while r <= last_round {
            let parents = if r == 1 { SourceSet::empty() } else { set(&honest) };
            byz.insert((b, r), parents);
            r += 2;
        }
    }
    let mut coin_overrides = BTreeMap::new();
    for w in 1..=waves {
        coin_overrides.insert(w, 4);
    }
    Scenario {
        params,
        kind: ProtocolKind::Tusk,
        scripts,
        byz,
        coin_overrides,
        forced_arm: BTreeMap::new(),
        seed: 0x75,
    }
}

/// Vote counts the liveness schedule's even rounds yield per leader
/// candidate, with the direct-commit thresholds of the two
/// parameterizations of the same seven validators: `k = 2, f = 3`
/// (threshold 4) never commits, `k = 3, f = 2` (threshold 3) commits
/// whenever the coin lands on a maximum-support leader.
#[derive(Clone, Debug)]
pub struct LivenessContrast {
    pub votes: BTreeMap<ValidatorId, u32>,
    pub k2_threshold: u32,
    pub k3_threshold: u32,
}

pub fn tusk_liveness_contrast() -> LivenessContrast {
    let mut votes: BTreeMap<ValidatorId, u32> = BTreeMap::new();
    for t in 0..7u8 {
        let c = TUSK_EVEN_PARENTS
            .iter()
            .filter(|g| g.contains(&t))
            .count() as u32;
        votes.insert(t, c);
    }
    LivenessContrast {
        votes,
        k2_threshold: Params::new(2, 3).unwrap().weak_quorum(),
        k3_threshold: Params::new(3, 2).unwrap().weak_quorum(),
    }
}

/// Which resolution validator 3 applies to its ambiguous wave-2 indirect
/// decision, and (with it) which DAG completion the schedule uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SafetyVariant {
    /// No resolution: validator 3 reports the ambiguity and skips, then its
    /// next commit already conflicts with validator 4's direct fallback
    /// commit.
    Base,
    /// Validator 3 commits the steady-state arm; validator 4 directly
    /// committed the fallback leader of the same wave.
    ForcedSs,
    /// Validator 3 commits the fallback arm, in the completion where
    /// validator 2 directly committed the steady-state leader.
    ForcedFb,
}

/// Asynchronous Bullshark under `n = 2f + 1 = 5`: wave 2 ends with exactly
/// `(k-2)f + 1 = 1` steady-state vote for its first steady-state leader
/// (validator 4's round-5 vertex) and `f = 2` fallback votes for its
/// fallback leader (validator 3's round-5 vertex) inside validator 3's
/// anchor cone, satisfying both arms of the indirect rule at once. All
/// coins are scripted: wave 1 -> 4, waves 2 and 3 -> 3.
pub fn bullshark_safety_scenario(variant: SafetyVariant) -> Scenario {
    let params = Params::new(2, 2).unwrap();
    let comp_a = variant != SafetyVariant::ForcedFb;
    let mut scripts: BTreeMap<ValidatorId, BTreeMap<Round, SourceSet>> = BTreeMap::new();
    let mut add = |v: ValidatorId, r: Round, xs: &[ValidatorId]| {
        scripts.entry(v).or_default().insert(r, set(xs));
    };
    // Wave 1 body: rounds 2-3 fully connected; round 4 separates validator
    // 4, whose vertex is the only one without a path to the wave's second
    // steady-state leader (validator 3's round-3 vertex).
    for v in 0..5u8 {
        add(v, 2, &[0, 1, 2, 3, 4]);
        add(v, 3, &[0, 1, 2, 3, 4]);
        add(v, 4, if v == 4 { &[0, 1, 2, 4] } else { &[0, 1, 2, 3] });
    }
    // Round 5 opens wave 2 and fixes the voting types: validator 1 sees
    // three good round-4 vertices (steady-state), 3 and 4 see only two
    // (fallback). Validators 0 and 2 differ per completion: hidden and
    // fallback-typed in completion A, steady-state in completion B.
    add(1, 5, &[0, 1, 2]);
    add(3, 5, &[1, 3, 4]);
    add(4, 5, &[1, 3, 4]);
    if comp_a {
        add(0, 5, &[0, 1, 4]);
        add(2, 5, &[1, 2, 4]);
    } else {
        add(0, 5, &[0, 1, 2]);
        add(2, 5, &[0, 1, 2]);
    }
    // Wave 2 cone of validator 3 (identical in both completions): the
    // {1, 3, 4} clique, which confines 3's later anchor reachability to one
    // steady-state voter (1) and two fallback voters (3, 4).
    for v in [1u8, 3, 4] {
        for r in 6..=8 {
            add(v, r, &[1, 3, 4]);
        }
    }
    // Validators 0 and 2 complete wave 2 outside that cone.
    if comp_a {
        for r in 6..=8 {
            add(0, r, &[0, 1, 3]);
            add(2, r, &[1, 2, 3]);
        }
    } else {
        add(0, 6, &[0, 1, 4]);
        add(0, 7, &[0, 1, 3]);
        add(0, 8, &[0, 1, 3]);
        add(2, 6, &[1, 2, 4]);
        // In completion B validator 2 reaches a steady-state quorum with
        // edges to wave 2's first steady-state leader and commits it
        // directly at its round-7 vertex.
        add(2, 7, &[0, 1, 2]);
        add(2, 8, &[1, 2, 3]);
    }
    // Round 9 opens wave 3 with every type fallback, except that in
    // completion A validator 4's opening shows a fallback-quorum commit of
    // wave 2's fallback leader — a direct commit conflicting with any
    // steady-state resolution of validator 3's ambiguity.
    add(0, 9, &[0, 1, 3]);
    add(1, 9, &[1, 3, 4]);
    add(2, 9, &[1, 2, 3]);
    add(3, 9, &[1, 3, 4]);
    if comp_a {
        add(4, 9, &[0, 3, 4]);
    }
    // Wave 3 runs inside the fallback-typed {0, 1, 3} cone so validator 3
    // directly commits the wave-3 fallback leader (its own round-9 vertex)
    // at round 13, triggering the backward traversal that hits the wave-2
    // ambiguity.
    for r in 10..=12 {
        add(0, r, &[0, 1, 3]);
        add(1, r, &[0, 1, 3]);
        add(3, r, &[0, 1, 3]);
    }
    add(3, 13, &[0, 1, 3]);
    let mut coin_overrides = BTreeMap::new();
    coin_overrides.insert(1, 4);
    coin_overrides.insert(2, 3);
    coin_overrides.insert(3, 3);
    let mut forced_arm = BTreeMap::new();
    match variant {
        SafetyVariant::Base => {}
        SafetyVariant::ForcedSs => {
            forced_arm.insert(3, VoterType::SteadyState);
        }
        SafetyVariant::ForcedFb => {
            forced_arm.insert(3, VoterType::Fallback);
        }
    }
    Scenario {
        params,
        kind: ProtocolKind::BullsharkAsync,
        scripts,
        byz: BTreeMap::new(),
        coin_overrides,
        forced_arm,
        seed: 0xb5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{CommitKind, LeaderRole};

    fn entries(out: &ScenarioOutcome, id: ValidatorId) -> Vec<(Wave, LeaderRole, CommitKind)> {
        out.states[&id]
            .record
            .entries
            .iter()
            .map(|e| (e.slot.wave, e.slot.role, e.kind))
            .collect()
    }

    #[test]
    fn tusk_liveness_schedule_never_commits() {
        let out = replay(&tusk_liveness_scenario(8));
        for (id, m) in &out.states {
            assert!(
                m.record.entries.is_empty(),
                "validator {id} committed {:?}",
                m.record.entries
            );
            assert!(m.completed_waves() >= 8, "validator {id} stalled");
        }
    }

    #[test]
    fn liveness_contrast_separates_k2_from_k3() {
        let c = tusk_liveness_contrast();
        let max = *c.votes.values().max().unwrap();
        assert!(max < c.k2_threshold);
        assert!(max >= c.k3_threshold);
    }

    #[test]
    fn safety_base_reports_ambiguity_and_splits_order() {
        let out = replay(&bullshark_safety_scenario(SafetyVariant::Base));
        assert!(out
            .violations
            .iter()
            .any(|(id, v)| *id == 3
                && matches!(v, Violation::AmbiguousIndirect { wave: 2, .. })));
        let e3 = entries(&out, 3);
        let e4 = entries(&out, 4);
        assert_eq!(e3[2], (3, LeaderRole::Fallback, CommitKind::Direct));
        assert_eq!(e4[2], (2, LeaderRole::Fallback, CommitKind::Direct));
    }

    /// Leader sequence without the direct/indirect distinction, which may
    /// legitimately differ between honest validators.
    fn slots(e: &[(Wave, LeaderRole, CommitKind)]) -> Vec<(Wave, LeaderRole)> {
        e.iter().map(|(w, r, _)| (*w, *r)).collect()
    }

    #[test]
    fn safety_forced_ss_conflicts_with_direct_fallback_commit() {
        let out = replay(&bullshark_safety_scenario(SafetyVariant::ForcedSs));
        let e3 = entries(&out, 3);
        let e4 = entries(&out, 4);
        assert_eq!(slots(&e3)[..2], slots(&e4)[..2]);
        assert_eq!(e3[2], (2, LeaderRole::FirstSs, CommitKind::Indirect));
        assert_eq!(e4[2], (2, LeaderRole::Fallback, CommitKind::Direct));
    }

    #[test]
    fn safety_forced_fb_conflicts_with_direct_steady_state_commit() {
        let out = replay(&bullshark_safety_scenario(SafetyVariant::ForcedFb));
        let e3 = entries(&out, 3);
        let e2 = entries(&out, 2);
        assert_eq!(slots(&e3)[..2], slots(&e2)[..2]);
        assert_eq!(e3[2], (2, LeaderRole::Fallback, CommitKind::Indirect));
        assert_eq!(e2[2], (2, LeaderRole::FirstSs, CommitKind::Direct));
    }
}
