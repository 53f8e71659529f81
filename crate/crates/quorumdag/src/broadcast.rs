//! Reliable broadcast without trusted hardware.
//!
//! The DAG layer assumes non-equivocating broadcast: at most one vertex per
//! `(round, source)` key ever gets delivered, at every honest validator. One
//! way to discharge that assumption is a signed echo protocol run by
//! `3f + 1` nodes: the `2f + 1` consensus validators plus `f` auxiliary
//! *witness* nodes that relay but never deliver. Witnesses let a `k = 2`
//! committee (`n = 2f + 1`) keep the classical `3f + 1` broadcast quorum
//! without adding consensus validators.
//!
//! Protocol, per `(origin, slot)` instance:
//!
//! 1. the sender tags (signs) its message and sends it to all nodes;
//! 2. on first receipt of a validly tagged message for the instance, a node
//!    re-sends it to every node except the one it came from;
//! 3. a *validator* delivers a body once identical copies have arrived from
//!    `n_total - f` distinct nodes (its own attestation included).
//!
//! Two honest validators can never deliver different bodies: each would need
//! `n_total - 2f = f + 1` honest attesters, honest nodes attest at most one
//! body per instance, and `2(f + 1)` exceeds the `2f + 1` honest nodes.
//!
//! This module also contains an exhaustive delivery-order model checker for
//! the `f = 1` instance and randomized drivers for larger `f`, used by the
//! acceptance suite.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};

/// Node index in the broadcast overlay: validators first, then witnesses.
pub type NodeId = u8;

/// Overlay layout for TEE-less broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessConfig {
    pub f: u32,
}

impl WitnessConfig {
    pub fn validators(&self) -> u32 {
        2 * self.f + 1
    }

    pub fn witnesses(&self) -> u32 {
        self.f
    }

    pub fn n_total(&self) -> u32 {
        3 * self.f + 1
    }

    pub fn is_validator(&self, node: NodeId) -> bool {
        (node as u32) < self.validators()
    }

    /// Copies from distinct nodes required before a validator delivers.
    pub fn delivery_threshold(&self) -> u32 {
        self.n_total() - self.f
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.n_total() as NodeId
    }
}

/// A tagged broadcast message. `tagged_by` models the signature: honest
/// nodes only originate messages with `tagged_by == origin`, and receivers
/// drop anything else, so a Byzantine node cannot forge messages for other
/// origins (it can only equivocate on its own).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RbMessage {
    pub origin: NodeId,
    pub slot: u64,
    pub body: u64,
    pub tagged_by: NodeId,
}

/// Output of processing a received message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RbAction {
    /// Relay the message to another node.
    Send { to: NodeId, msg: RbMessage },
    /// Local delivery of `body` for `(origin, slot)` (validators only).
    Deliver { origin: NodeId, slot: u64, body: u64 },
}

/// Per-instance receiver state.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct RbInstance {
    /// Body this node echoed (first validly tagged body it saw).
    pub attested: Option<u64>,
    /// Distinct nodes from which each body arrived.
    pub received_from: BTreeMap<u64, BTreeSet<NodeId>>,
    pub delivered: Option<u64>,
}

/// Broadcast-layer state of one node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RbNode {
    pub instances: BTreeMap<(NodeId, u64), RbInstance>,
}

impl RbNode {
    /// Messages an honest sender emits to start an instance. The sender
    /// attests its own body immediately, so its copy counts toward every
    /// receiver's threshold exactly once (as `from == origin`).
    pub fn broadcast(
        &mut self,
        cfg: &WitnessConfig,
        self_id: NodeId,
        slot: u64,
        body: u64,
    ) -> Vec<RbAction> {
        let inst = self.instances.entry((self_id, slot)).or_default();
        inst.attested = Some(body);
        inst.received_from.entry(body).or_default().insert(self_id);
        let msg = RbMessage { origin: self_id, slot, body, tagged_by: self_id };
        let mut out: Vec<RbAction> = cfg
            .nodes()
            .filter(|to| *to != self_id)
            .map(|to| RbAction::Send { to, msg })
            .collect();
        if let Some(action) = self.check_delivery(cfg, self_id, self_id, slot) {
            out.push(action);
        }
        out
    }

    fn check_delivery(
        &mut self,
        cfg: &WitnessConfig,
        self_id: NodeId,
        origin: NodeId,
        slot: u64,
    ) -> Option<RbAction> {
        if !cfg.is_validator(self_id) {
            return None;
        }
        let inst = self.instances.get_mut(&(origin, slot))?;
        if inst.delivered.is_some() {
            return None;
        }
        let threshold = cfg.delivery_threshold();
        for (body, senders) in &inst.received_from {
            if senders.len() as u32 >= threshold {
                inst.delivered = Some(*body);
                return Some(RbAction::Deliver { origin, slot, body: *body });
            }
        }
        None
    }

    /// Handles a message received from `from`. Invalidly tagged messages are
    /// dropped.
    pub fn on_receive(
        &mut self,
        cfg: &WitnessConfig,
        self_id: NodeId,
        from: NodeId,
        msg: RbMessage,
    ) -> Vec<RbAction> {
        if msg.tagged_by != msg.origin {
            return Vec::new();
        }
        let mut out = Vec::new();
        let inst = self.instances.entry((msg.origin, msg.slot)).or_default();
        inst.received_from.entry(msg.body).or_default().insert(from);
        if inst.attested.is_none() {
            // First sight: attest and re-send to every other node. The echo
            // must also reach `from` and the origin, since their delivery
            // thresholds count this node's attestation too.
            inst.attested = Some(msg.body);
            inst.received_from.entry(msg.body).or_default().insert(self_id);
            for to in cfg.nodes() {
                if to != self_id {
                    out.push(RbAction::Send { to, msg });
                }
            }
        }
        if let Some(action) = self.check_delivery(cfg, self_id, msg.origin, msg.slot) {
            out.push(action);
        }
        out
    }
}

/// A message in flight: `(to, from, msg)`.
pub type InFlight = (NodeId, NodeId, RbMessage);

/// Verdict of a model-checking or randomized broadcast run.
#[derive(Clone, Debug, Default)]
pub struct RbRunReport {
    pub states_explored: u64,
    /// Two honest validators delivered different bodies somewhere.
    pub agreement_violated: bool,
    /// Some honest validator failed to deliver in a validity run.
    pub validity_violated: bool,
}

fn canonical_state(nodes: &[RbNode], inflight: &BTreeSet<InFlight>) -> Vec<u8> {
    // Cheap structural serialization for the visited-set. Deterministic
    // because every container is ordered.
    let mut out = Vec::new();
    for node in nodes {
        for ((origin, slot), inst) in &node.instances {
            out.extend_from_slice(&[*origin, 0xfe]);
            out.extend_from_slice(&slot.to_le_bytes());
            out.push(inst.attested.map_or(0xff, |b| b as u8));
            out.push(inst.delivered.map_or(0xff, |b| b as u8));
            for (body, senders) in &inst.received_from {
                out.push(*body as u8);
                let mask: u32 = senders.iter().fold(0, |m, s| m | 1 << s);
                out.extend_from_slice(&mask.to_le_bytes());
            }
            out.push(0xfd);
        }
        out.push(0xfc);
    }
    for (to, from, msg) in inflight {
        out.extend_from_slice(&[*to, *from, msg.origin, msg.body as u8, msg.tagged_by]);
    }
    out
}

fn apply_actions(
    to: NodeId,
    actions: Vec<RbAction>,
    inflight: &mut BTreeSet<InFlight>,
    silent: &BTreeSet<NodeId>,
    delivered: &mut BTreeMap<NodeId, u64>,
) -> bool {
    let mut conflict = false;
    for action in actions {
        match action {
            RbAction::Send { to: dst, msg } => {
                // Silent (crashed/Byzantine-mute) nodes accept input but
                // never relay.
                if !silent.contains(&to) {
                    inflight.insert((dst, to, msg));
                }
            }
            RbAction::Deliver { body, .. } => {
                if let Some(prev) = delivered.insert(to, body) {
                    conflict |= prev != body;
                }
            }
        }
    }
    conflict
}

/// Exhaustively explores every delivery order of one broadcast instance at
/// `f = 1` (4 nodes) with an equivocating Byzantine sender, over all ways
/// the sender can split two conflicting bodies across the other nodes.
/// Returns the report; agreement must never be violated.
pub fn model_check_equivocation_f1() -> RbRunReport {
    let cfg = WitnessConfig { f: 1 };
    let n = cfg.n_total() as usize;
    let sender: NodeId = 0;
    let bodies = [0xAAu64, 0xBB];
    let mut report = RbRunReport::default();

    // Sender choice per non-sender node: body A, body B, or nothing.
    let others: Vec<NodeId> = cfg.nodes().filter(|v| *v != sender).collect();
    for split in 0..3u32.pow(others.len() as u32) {
        let mut inflight: BTreeSet<InFlight> = BTreeSet::new();
        let mut code = split;
        for to in &others {
            let choice = code % 3;
            code /= 3;
            if choice < 2 {
                let msg = RbMessage {
                    origin: sender,
                    slot: 0,
                    body: bodies[choice as usize],
                    tagged_by: sender,
                };
                inflight.insert((*to, sender, msg));
            }
        }
        let nodes = vec![RbNode::default(); n];
        let silent: BTreeSet<NodeId> = [sender].into_iter().collect();
        let mut visited: HashSet<Vec<u8>> = HashSet::new();
        dfs(&cfg, nodes, inflight, &silent, &mut visited, &mut report);
    }
    report
}

fn dfs(
    cfg: &WitnessConfig,
    nodes: Vec<RbNode>,
    inflight: BTreeSet<InFlight>,
    silent: &BTreeSet<NodeId>,
    visited: &mut HashSet<Vec<u8>>,
    report: &mut RbRunReport,
) {
    if !visited.insert(canonical_state(&nodes, &inflight)) {
        return;
    }
    report.states_explored += 1;
    // Agreement over validator delivery states.
    let mut seen: BTreeSet<u64> = BTreeSet::new();
    for (id, node) in nodes.iter().enumerate() {
        if cfg.is_validator(id as NodeId) && !silent.contains(&(id as NodeId)) {
            for inst in node.instances.values() {
                if let Some(body) = inst.delivered {
                    seen.insert(body);
                }
            }
        }
    }
    if seen.len() > 1 {
        report.agreement_violated = true;
        return;
    }
    for step in inflight.iter().cloned().collect::<Vec<_>>() {
        let (to, from, msg) = step;
        let mut next_nodes = nodes.clone();
        let mut next_inflight = inflight.clone();
        next_inflight.remove(&step);
        let actions = next_nodes[to as usize].on_receive(cfg, to, from, msg);
        let mut dmap = BTreeMap::new();
        apply_actions(to, actions, &mut next_inflight, silent, &mut dmap);
        dfs(cfg, next_nodes, next_inflight, silent, visited, report);
    }
}

/// One randomized run with an equivocating sender at the given `f`:
/// processes in-flight messages in a seeded random order and reports whether
/// agreement among honest validators held.
pub fn randomized_equivocation_run(f: u32, seed: u64) -> RbRunReport {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let cfg = WitnessConfig { f };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sender: NodeId = 0;
    let bodies = [0xAAu64, 0xBB];
    let mut nodes = vec![RbNode::default(); cfg.n_total() as usize];
    let silent: BTreeSet<NodeId> = [sender].into_iter().collect();
    let mut inflight: Vec<InFlight> = Vec::new();
    for to in cfg.nodes().filter(|v| *v != sender) {
        if rng.gen_bool(0.8) {
            let body = bodies[rng.gen_range(0..2)];
            let msg = RbMessage { origin: sender, slot: 0, body, tagged_by: sender };
            inflight.push((to, sender, msg));
        }
    }
    let mut report = RbRunReport::default();
    let mut delivered: BTreeMap<NodeId, u64> = BTreeMap::new();
    while !inflight.is_empty() {
        let idx = rng.gen_range(0..inflight.len());
        let (to, from, msg) = inflight.swap_remove(idx);
        let actions = nodes[to as usize].on_receive(&cfg, to, from, msg);
        let mut set: BTreeSet<InFlight> = inflight.iter().cloned().collect();
        report.agreement_violated |=
            apply_actions(to, actions, &mut set, &silent, &mut delivered);
        inflight = set.into_iter().collect();
        inflight.shuffle(&mut rng);
        report.states_explored += 1;
    }
    let honest_bodies: BTreeSet<u64> = delivered
        .iter()
        .filter(|(id, _)| **id != sender)
        .map(|(_, b)| *b)
        .collect();
    report.agreement_violated |= honest_bodies.len() > 1;
    report
}

/// One randomized validity run: honest sender, `f` silent Byzantine
/// non-sender nodes, random delivery order. Every honest validator must
/// deliver the sender's body.
pub fn randomized_validity_run(f: u32, seed: u64) -> RbRunReport {
    use rand::{Rng, SeedableRng};
    let cfg = WitnessConfig { f };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sender: NodeId = 0;
    let body = 0xAAu64;
    // Pick f silent nodes among non-senders.
    let mut silent: BTreeSet<NodeId> = BTreeSet::new();
    while (silent.len() as u32) < f {
        let node = rng.gen_range(1..cfg.n_total()) as NodeId;
        silent.insert(node);
    }
    let mut nodes = vec![RbNode::default(); cfg.n_total() as usize];
    let mut delivered: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut inflight: BTreeSet<InFlight> = BTreeSet::new();
    let actions = nodes[sender as usize].broadcast(&cfg, sender, 0, body);
    let mut report = RbRunReport::default();
    report.agreement_violated |=
        apply_actions(sender, actions, &mut inflight, &silent, &mut delivered);
    while !inflight.is_empty() {
        let items: Vec<InFlight> = inflight.iter().cloned().collect();
        let (to, from, msg) = items[rng.gen_range(0..items.len())];
        inflight.remove(&(to, from, msg));
        let actions = nodes[to as usize].on_receive(&cfg, to, from, msg);
        report.agreement_violated |=
            apply_actions(to, actions, &mut inflight, &silent, &mut delivered);
        report.states_explored += 1;
    }
    for v in 0..cfg.validators() as NodeId {
        if silent.contains(&v) {
            continue;
        }
        if delivered.get(&v) != Some(&body) {
            report.validity_violated = true;
        }
    }
    report
}
