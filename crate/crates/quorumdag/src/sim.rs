//! Discrete-event simulator for the protocol state machines.
//!
//! Runs `n` per-validator machines against a message-delay model, an
//! optional Byzantine minority, and optional routing of every vertex through
//! the witness-assisted reliable-broadcast overlay. Everything is driven by
//! a single `(time, seq)`-ordered event queue, so a run is a pure function
//! of its configuration and seed.
//!
//! The `Adversarial` delay model implements the worst-case scheduler used by
//! the liveness and throughput experiments: for every validator and round it
//! picks one strong quorum minus one of prompt peers and withholds everyone
//! else's vertex until the victim has advanced past that round on its own.
//! The scheduler never reads unrevealed coins (attempted peeks are recorded
//! as denied by the registry), so its choices are coin-independent.

use crate::broadcast::{RbAction, RbMessage, RbNode, WitnessConfig};
use crate::coin::CoinRegistry;
use crate::dag::Vertex;
use crate::params::{Params, Round, ValidatorId, Wave};
use crate::protocols::{
    ParentPolicy, ProtoOutput, ProtocolKind, ProtocolState, StateOptions, Violation,
};
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DelayModel {
    /// Worst-case withholding scheduler (see module docs).
    Adversarial,
    /// Independent uniform integer delays in `[lo, hi]`.
    RandomUniform { lo: u64, hi: u64 },
    /// Uniform in `[1, 10*delta]` before `gst`, uniform in `[1, delta]`
    /// after.
    PartialSync { gst: u64, delta: u64 },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::RandomUniform { lo: 1, hi: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ByzBehavior {
    /// Crashed from the start: broadcasts nothing.
    Silent,
    /// Runs the protocol but references only a random strong quorum of each
    /// round as parents.
    AdversarialParents,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub params: Params,
    pub kind: ProtocolKind,
    pub delay: DelayModel,
    /// Number of Byzantine validators (the highest-numbered ids), at most `f`.
    pub byz_count: u32,
    pub byz: ByzBehavior,
    /// Stop once every honest validator has completed this many waves.
    pub wave_budget: u32,
    /// Round-timer duration for the timeout-gated protocols.
    pub timeout: u64,
    pub seed: u64,
    pub max_events: u64,
    /// Route every vertex through the witness-assisted broadcast overlay
    /// (`k = 2` layouts only) instead of delivering it directly.
    pub use_witness_broadcast: bool,
    /// Keep a textual event trace in the result.
    pub log: bool,
    pub reanchor: bool,
}

impl SimConfig {
    pub fn new(params: Params, kind: ProtocolKind) -> Self {
        SimConfig {
            params,
            kind,
            delay: DelayModel::default(),
            byz_count: 0,
            byz: ByzBehavior::Silent,
            wave_budget: 10,
            timeout: 40,
            seed: 0,
            max_events: 5_000_000,
            use_witness_broadcast: false,
            log: false,
            reanchor: true,
        }
    }
}

#[derive(Clone, Debug)]
enum Ev {
    /// Direct vertex delivery.
    Vertex { to: ValidatorId, v: Vertex },
    /// Round timer expiry.
    Timeout { at: ValidatorId, round: Round },
    /// Broadcast-overlay message hop.
    Rb { to: u8, from: u8, msg: RbMessage },
}

#[derive(Clone, Debug)]
struct Event {
    time: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed for min-heap behavior inside `BinaryHeap`.
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Outcome of one simulation run.
#[derive(Debug)]
pub struct RunResult {
    pub states: BTreeMap<ValidatorId, ProtocolState>,
    pub violations: Vec<(ValidatorId, Violation)>,
    pub trace: Vec<String>,
    /// Event budget ran out before every honest validator finished.
    pub truncated: bool,
    pub events: u64,
    pub final_time: u64,
    pub denied_coin_peeks: u64,
}

impl RunResult {
    pub fn honest_ids(&self) -> Vec<ValidatorId> {
        self.states.keys().copied().collect()
    }
}

struct Sim {
    cfg: SimConfig,
    coin: CoinRegistry,
    machines: BTreeMap<ValidatorId, ProtocolState>,
    heap: BinaryHeap<Event>,
    seq: u64,
    events: u64,
    now: u64,
    rng: ChaCha8Rng,
    /// Vertices the adversary is withholding, keyed by victim and round.
    withheld: BTreeMap<(ValidatorId, Round), Vec<Vertex>>,
    /// Broadcast overlay state (witness mode only).
    rb_nodes: Vec<RbNode>,
    rb_cfg: Option<WitnessConfig>,
    rb_bodies: BTreeMap<(u8, u64), Vertex>,
    trace: Vec<String>,
    peeked_waves: BTreeSet<Wave>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.rotate_left(32);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^ (x >> 31)
}

impl Sim {
    fn new(cfg: SimConfig) -> Self {
        assert!(cfg.byz_count <= cfg.params.f());
        let coin = CoinRegistry::new(cfg.params, cfg.seed);
        let rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0xda6, 0x51b));
        let rb_cfg = if cfg.use_witness_broadcast {
            assert_eq!(cfg.params.k(), 2, "witness overlay targets n = 2f + 1");
            Some(WitnessConfig { f: cfg.params.f() })
        } else {
            None
        };
        let rb_nodes = match rb_cfg {
            Some(c) => vec![RbNode::default(); c.n_total() as usize],
            None => Vec::new(),
        };
        Sim {
            cfg,
            coin,
            machines: BTreeMap::new(),
            heap: BinaryHeap::new(),
            seq: 0,
            events: 0,
            now: 0,
            rng,
            withheld: BTreeMap::new(),
            rb_nodes,
            rb_cfg,
            rb_bodies: BTreeMap::new(),
            trace: Vec::new(),
            peeked_waves: BTreeSet::new(),
        }
    }

    fn is_byz(&self, v: ValidatorId) -> bool {
        (v as u32) >= self.cfg.params.n() - self.cfg.byz_count
    }

    fn honest(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        self.cfg.params.validators().filter(|v| !self.is_byz(*v))
    }

    fn participants(&self) -> Vec<ValidatorId> {
        self.cfg
            .params
            .validators()
            .filter(|v| !(self.is_byz(*v) && self.cfg.byz == ByzBehavior::Silent))
            .collect()
    }

    fn push(&mut self, time: u64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Event { time, seq: self.seq, ev });
    }

    fn sample_delay(&mut self) -> u64 {
        match self.cfg.delay {
            DelayModel::Adversarial => 1,
            DelayModel::RandomUniform { lo, hi } => self.rng.gen_range(lo..=hi),
            DelayModel::PartialSync { gst, delta } => {
                if self.now < gst {
                    self.rng.gen_range(1..=10 * delta)
                } else {
                    self.rng.gen_range(1..=delta)
                }
            }
        }
    }

    /// The adversary's prompt set for `(victim, round)`: a fixed random
    /// choice of `q - 1` senders whose vertices are delivered immediately;
    /// every other sender's vertex is withheld until the victim advances.
    /// Deterministic in the seed and independent of all coin values.
    fn prompt_set(&self, victim: ValidatorId, round: Round) -> BTreeSet<ValidatorId> {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, victim as u64, round as u64));
        let candidates = self
            .participants()
            .into_iter()
            .filter(|s| *s != victim);
        let take = (self.cfg.params.strong_quorum() - 1) as usize;
        candidates.choose_multiple(&mut rng, take).into_iter().collect()
    }

    fn log(&mut self, line: String) {
        if self.cfg.log {
            self.trace.push(line);
        }
    }

    /// Routes a freshly created vertex from `src` toward every other
    /// participant, through whichever transport the config selects.
    fn route(&mut self, src: ValidatorId, v: Vertex) {
        if let Some(rb) = self.rb_cfg {
            let slot = v.round as u64;
            self.rb_bodies.insert((src, slot), v);
            let actions = self.rb_nodes[src as usize].broadcast(&rb, src, slot, slot);
            self.apply_rb_actions(src, actions);
            return;
        }
        if self.cfg.delay == DelayModel::Adversarial {
            // One denied peek attempt per wave documents that the scheduler
            // cannot condition on unrevealed coins.
            let wave = (v.round / 4) + 1;
            if self.peeked_waves.insert(wave) {
                let _ = self.coin.adversary_peek(wave, self.events);
            }
            let targets: Vec<ValidatorId> =
                self.honest().filter(|dst| *dst != src).collect();
            for dst in targets {
                if self.prompt_set(dst, v.round).contains(&src) {
                    self.push(self.now + 1, Ev::Vertex { to: dst, v });
                } else {
                    self.withheld.entry((dst, v.round)).or_default().push(v);
                }
            }
            // Byzantine AdversarialParents machines get everything promptly;
            // they are the scheduler's collaborators.
            let byz_targets: Vec<ValidatorId> = self
                .participants()
                .into_iter()
                .filter(|dst| self.is_byz(*dst) && *dst != src)
                .collect();
            for dst in byz_targets {
                self.push(self.now + 1, Ev::Vertex { to: dst, v });
            }
            return;
        }
        let targets: Vec<ValidatorId> =
            self.participants().into_iter().filter(|dst| *dst != src).collect();
        for dst in targets {
            let d = self.sample_delay();
            self.push(self.now + d, Ev::Vertex { to: dst, v });
        }
    }

    fn apply_rb_actions(&mut self, at: u8, actions: Vec<RbAction>) {
        for a in actions {
            match a {
                RbAction::Send { to, msg } => {
                    let d = self.sample_delay();
                    self.push(self.now + d, Ev::Rb { to, from: at, msg });
                }
                RbAction::Deliver { origin, slot, .. } => {
                    let v = self.rb_bodies[&(origin, slot)];
                    self.push(self.now, Ev::Vertex { to: at, v });
                }
            }
        }
    }

    /// Releases any withheld vertices for rounds the victim has moved past.
    fn release_withheld(&mut self, dst: ValidatorId) {
        let current = self.machines[&dst].current_round();
        let due: Vec<(ValidatorId, Round)> = self
            .withheld
            .keys()
            .filter(|(d, r)| *d == dst && *r < current)
            .copied()
            .collect();
        for key in due {
            for v in self.withheld.remove(&key).unwrap() {
                self.push(self.now + 1, Ev::Vertex { to: dst, v });
            }
        }
    }

    fn handle_outputs(&mut self, at: ValidatorId, outs: Vec<ProtoOutput>) {
        for o in outs {
            match o {
                ProtoOutput::Broadcast(v) => {
                    if self.cfg.kind.has_predefined_leaders() {
                        self.push(
                            self.now + self.cfg.timeout,
                            Ev::Timeout { at, round: v.round },
                        );
                    }
                    self.route(at, v);
                }
                ProtoOutput::Committed(e) => {
                    let line = format!(
                        "COMMIT {} {} wave={} role={} kind={} leader={} round={}",
                        at,
                        self.cfg.kind.name(),
                        e.slot.wave,
                        e.slot.role.name(),
                        match e.kind {
                            crate::protocols::CommitKind::Direct => "direct",
                            crate::protocols::CommitKind::Indirect => "indirect",
                        },
                        e.slot.validator,
                        e.slot.round
                    );
                    self.log(line);
                }
                ProtoOutput::Violation(v) => {
                    self.log(format!("VIOLATION {:?} at={}", v, at));
                }
            }
        }
    }

    fn done(&self) -> bool {
        self.honest()
            .all(|id| self.machines[&id].completed_waves() >= self.cfg.wave_budget)
    }

    fn run(mut self) -> RunResult {
        let opts_for = |sim: &Sim, id: ValidatorId| StateOptions {
            auto_timeouts: !sim.cfg.kind.has_predefined_leaders(),
            forced_arm: None,
            reanchor: sim.cfg.reanchor,
            parent_policy: if sim.is_byz(id) {
                ParentPolicy::RandomQuorum
            } else {
                ParentPolicy::All
            },
            seed: sim.cfg.seed,
        };
        for id in self.participants() {
            let opts = opts_for(&self, id);
            let (st, v0) = ProtocolState::new(self.cfg.params, self.cfg.kind, id, opts);
            self.machines.insert(id, st);
            if self.cfg.kind.has_predefined_leaders() {
                self.push(self.cfg.timeout, Ev::Timeout { at: id, round: 1 });
            }
            self.route(id, v0);
        }
        let mut truncated = false;
        while let Some(ev) = self.heap.pop() {
            self.now = ev.time;
            self.events += 1;
            if self.events > self.cfg.max_events {
                truncated = true;
                break;
            }
            match ev.ev {
                Ev::Vertex { to, v } => {
                    self.log(format!("RB {} {} -> {} vertex", v.source, v.round, to));
                    let mut m = self.machines.remove(&to).unwrap();
                    let outs = m.deliver(v, &mut self.coin, self.events);
                    self.machines.insert(to, m);
                    self.handle_outputs(to, outs);
                    self.release_withheld(to);
                }
                Ev::Timeout { at, round } => {
                    let mut m = self.machines.remove(&at).unwrap();
                    let outs = m.timeout_fired(round, &mut self.coin, self.events);
                    self.machines.insert(at, m);
                    self.handle_outputs(at, outs);
                    self.release_withheld(at);
                }
                Ev::Rb { to, from, msg } => {
                    let rb = self.rb_cfg.unwrap();
                    let actions = self.rb_nodes[to as usize].on_receive(&rb, to, from, msg);
                    self.apply_rb_actions(to, actions);
                }
            }
            if self.done() {
                break;
            }
        }
        if !self.done() {
            truncated = truncated || true;
        }
        let honest: BTreeSet<ValidatorId> = self.honest().collect();
        let mut violations = Vec::new();
        for (id, m) in &self.machines {
            for v in &m.violations {
                violations.push((*id, *v));
            }
        }
        if self.cfg.log {
            for w in self.coin.revealed_waves() {
                let line = format!(
                    "COIN {} {} revealed_at={}",
                    w,
                    self.coin.value(w),
                    self.coin.revealed_at(w).unwrap_or(0)
                );
                self.trace.push(line);
            }
        }
        RunResult {
            states: self
                .machines
                .into_iter()
                .filter(|(id, _)| honest.contains(id))
                .collect(),
            violations,
            trace: self.trace,
            truncated,
            events: self.events,
            final_time: self.now,
            denied_coin_peeks: self.coin.denied_peeks().len() as u64,
        }
    }
}

/// Runs one simulation to completion (or event-budget truncation).
pub fn run_sim(cfg: SimConfig) -> RunResult {
    Sim::new(cfg).run()
}

/// Sanity oracle: every honest validator holds every honest vertex for all
/// rounds it has comfortably moved past (two rounds of slack absorb releases
/// still in flight when the run stopped).
pub fn honest_delivery_holds(result: &RunResult) -> bool {
    let ids: Vec<ValidatorId> = result.states.keys().copied().collect();
    for dst in &ids {
        let m = &result.states[dst];
        let settled = m.current_round().saturating_sub(2);
        for r in 1..=settled {
            for src in &ids {
                if !m.dag.contains(r, *src) {
                    return false;
                }
            }
        }
    }
    true
}
