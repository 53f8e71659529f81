//! Safety/liveness oracles, the common-core checker, closed-form
//! probability and expectation calculators, the Monte Carlo experiment
//! driver, and the summary-table renderer.
//!
//! Everything here is an *independent* check: the oracles recompute
//! properties from final DAGs and commit records without reusing the
//! protocol engines' internal decisions, so a bug in the commit logic shows
//! up as an oracle failure rather than being self-consistently invisible.

use crate::dag::{LocalDag, SourceSet, VertexId};
use crate::params::{Params, Round, ValidatorId, Wave};
use crate::protocols::{CommitKind, LeaderRole, ProtocolState};
use crate::sim::{run_sim, SimConfig};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Row keys of the summary table. `TuskRandom` is Tusk evaluated under the
/// random-delay model instead of the worst-case scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableProtocol {
    DagRider,
    Tusk,
    TuskRandom,
    BullsharkAsync,
    BullsharkPsync,
}

impl TableProtocol {
    pub fn name(&self) -> &'static str {
        match self {
            TableProtocol::DagRider => "dagrider",
            TableProtocol::Tusk => "tusk",
            TableProtocol::TuskRandom => "tusk-random",
            TableProtocol::BullsharkAsync => "bullshark-async",
            TableProtocol::BullsharkPsync => "bullshark-psync",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbModel {
    /// Worst-case scheduler; the guarantee is a lower bound over the coin.
    AdversarialBound,
    /// Uniformly random message delays.
    RandomDelay,
}

/// An exact analytic quantity, or the reason none exists.
#[derive(Clone, Debug, PartialEq)]
pub enum Analytic {
    Value(BigRational),
    NotLive,
    NotSafe,
}

impl Analytic {
    pub fn value(&self) -> Option<&BigRational> {
        match self {
            Analytic::Value(v) => Some(v),
            _ => None,
        }
    }
}

pub fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// `P[Binomial(trials, p) >= threshold]` as an exact rational.
pub fn binomial_tail(trials: u32, p: &BigRational, threshold: u32) -> BigRational {
    let mut acc = BigRational::zero();
    let one = BigRational::one();
    for successes in threshold..=trials {
        let mut term = BigRational::from(BigInt::from(choose(trials, successes)));
        for _ in 0..successes {
            term *= p;
        }
        for _ in successes..trials {
            term *= &one - p;
        }
        acc += term;
    }
    acc
}

fn choose(n: u32, k: u32) -> u128 {
    let k = k.min(n - k);
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..k as u128 {
        num *= n as u128 - i;
        den *= i + 1;
    }
    num / den
}

/// Per-wave direct-commit probability. Under the worst-case scheduler the
/// value is the protocol's lower bound over the coin: `q/n` for DAG-Rider
/// and asynchronous Bullshark, `((k-2)f+1)/n` for Tusk with `k >= 3` (and
/// no positive bound at `k = 2`). Under random delays, Tusk's bound is the
/// binomial tail `P[Bin((k-1)f+1, (k-1)/k) >= f+1]`: each of the
/// `(k-1)f+1` vote-round vertices independently references the leader with
/// probability at least `(k-1)/k`, the `f -> inf` floor of `q/n` that the
/// closed-form per-`k` values are computed from.
pub fn commit_probability_analytic(
    protocol: TableProtocol,
    k: u32,
    f: u32,
    model: ProbModel,
) -> Analytic {
    let params = Params::new(k, f).expect("valid (k, f)");
    let n = params.n() as i64;
    let q = params.strong_quorum() as i64;
    match (protocol, model) {
        (TableProtocol::BullsharkAsync, _) if k == 2 => Analytic::NotSafe,
        (TableProtocol::DagRider | TableProtocol::BullsharkAsync, _) => {
            Analytic::Value(rat(q, n))
        }
        (TableProtocol::Tusk, ProbModel::AdversarialBound) => {
            if k == 2 {
                Analytic::NotLive
            } else {
                Analytic::Value(rat(((k - 2) * f + 1) as i64, n))
            }
        }
        (TableProtocol::Tusk | TableProtocol::TuskRandom, ProbModel::RandomDelay)
        | (TableProtocol::TuskRandom, ProbModel::AdversarialBound) => {
            let p = rat((k - 1) as i64, k as i64);
            Analytic::Value(binomial_tail(params.strong_quorum(), &p, params.weak_quorum()))
        }
        (TableProtocol::BullsharkPsync, _) => {
            // After stabilization every wave with honest leaders commits.
            Analytic::Value(rat(q, n))
        }
    }
}

/// Expected waves between commits for the summary table's live cells.
pub fn expected_waves_analytic(protocol: TableProtocol, k: u32) -> Analytic {
    match protocol {
        TableProtocol::BullsharkAsync if k == 2 => Analytic::NotSafe,
        TableProtocol::DagRider | TableProtocol::BullsharkAsync => {
            Analytic::Value(rat(k as i64, (k - 1) as i64))
        }
        TableProtocol::Tusk => {
            if k == 2 {
                Analytic::NotLive
            } else {
                Analytic::Value(rat(k as i64, (k - 2) as i64))
            }
        }
        TableProtocol::TuskRandom => {
            match commit_probability_analytic(protocol, k, 1, ProbModel::RandomDelay) {
                Analytic::Value(p) => Analytic::Value(p.recip()),
                other => other,
            }
        }
        TableProtocol::BullsharkPsync => Analytic::Value(BigRational::one()),
    }
}

/// First divergence between two honest linearizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderConflict {
    pub a: ValidatorId,
    pub b: ValidatorId,
    pub index: usize,
}

/// Total order: every pair of honest linearized outputs must be
/// prefix-compatible.
pub fn check_total_order(
    states: &BTreeMap<ValidatorId, ProtocolState>,
) -> Result<(), OrderConflict> {
    let ids: Vec<ValidatorId> = states.keys().copied().collect();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let oa = &states[&a].record.order;
            let ob = &states[&b].record.order;
            let len = oa.len().min(ob.len());
            if let Some(ix) = (0..len).find(|&ix| oa[ix] != ob[ix]) {
                return Err(OrderConflict { a, b, index: ix });
            }
        }
    }
    Ok(())
}

/// A common core of a completed 4-round wave: round-1 set `v` and round-4
/// set `u`, both of at least strong-quorum size, with a path from every `u`
/// member to every `v` member.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommonCore {
    pub v: SourceSet,
    pub u: SourceSet,
}

fn wave_rounds(w: Wave) -> (Round, Round) {
    (4 * (w - 1) + 1, 4 * w)
}

fn verify_core(dag: &LocalDag, w: Wave, core: &CommonCore) -> bool {
    let (r1, r4) = wave_rounds(w);
    let q = dag.params().strong_quorum();
    core.v.len() >= q
        && core.u.len() >= q
        && core.u.iter().all(|u| {
            let reach = dag.ancestors_at((r4, u), r1);
            core.v.is_subset(reach)
        })
}

/// Searches for a common core of wave `w`: first the pivot heuristic — a
/// round-2 vertex reachable from a strong quorum of round-4 vertices
/// certifies its own parents as `v` — then exhaustive subset search.
pub fn check_common_core(dag: &LocalDag, w: Wave) -> Option<CommonCore> {
    let (r1, r4) = wave_rounds(w);
    let r2 = r1 + 1;
    let q = dag.params().strong_quorum();
    for p in dag.round_sources(r2).iter() {
        let u = SourceSet::from_iter(
            dag.round_sources(r4)
                .iter()
                .filter(|s| dag.ancestors_at((r4, *s), r2).contains(p)),
        );
        if u.len() >= q {
            let v = dag.get(r2, p).expect("listed").parents;
            let core = CommonCore { v, u };
            debug_assert!(verify_core(dag, w, &core));
            return Some(core);
        }
    }
    common_core_brute_force(dag, w)
}

/// Exhaustive maximum-biclique search over round-4 subsets: for each subset
/// of at least strong-quorum size, the candidate `v` is the intersection of
/// the members' round-1 ancestries. Exponential in `n`; the independent
/// oracle the heuristic is validated against.
pub fn common_core_brute_force(dag: &LocalDag, w: Wave) -> Option<CommonCore> {
    let (r1, r4) = wave_rounds(w);
    let q = dag.params().strong_quorum();
    let present: Vec<ValidatorId> = dag.round_sources(r4).iter().collect();
    let m = present.len();
    assert!(m <= 24, "brute force restricted to small committees");
    let reach: Vec<SourceSet> = present
        .iter()
        .map(|s| dag.ancestors_at((r4, *s), r1))
        .collect();
    for mask in 1u32..(1 << m) {
        if (mask.count_ones()) < q {
            continue;
        }
        let mut v = SourceSet(!0u32 >> (32 - crate::params::MAX_VALIDATORS as u32));
        let mut u = SourceSet::empty();
        for (i, s) in present.iter().enumerate() {
            if mask & (1 << i) != 0 {
                v = SourceSet(v.0 & reach[i].0);
                u.insert(*s);
            }
        }
        if v.len() >= q {
            let core = CommonCore { v, u };
            debug_assert!(verify_core(dag, w, &core));
            return Some(core);
        }
    }
    None
}

/// Leader-path safety (the shared core of the per-protocol safety lemmas):
/// in every honest validator's final DAG, each leader it committed has a
/// path to every leader *directly* committed by any honest validator at a
/// lower round. A missing path would let two validators order history
/// through incomparable leaders.
pub fn check_leader_path_safety(states: &BTreeMap<ValidatorId, ProtocolState>) -> bool {
    let mut direct: Vec<(Round, ValidatorId)> = Vec::new();
    for m in states.values() {
        for e in &m.record.entries {
            if e.kind == CommitKind::Direct {
                direct.push((e.slot.round, e.slot.validator));
            }
        }
    }
    direct.sort();
    direct.dedup();
    for m in states.values() {
        for e in &m.record.entries {
            let later: VertexId = (e.slot.round, e.slot.validator);
            for &(r, v) in &direct {
                if r < e.slot.round && !m.dag.strong_path(later, (r, v)) {
                    return false;
                }
            }
        }
    }
    true
}

/// No wave may see both a steady-state-role and a fallback-role leader
/// committed across the honest validators (asynchronous Bullshark,
/// meaningful for `k >= 3`).
pub fn check_no_mixed_wave_commits(states: &BTreeMap<ValidatorId, ProtocolState>) -> bool {
    let mut roles: BTreeMap<Wave, (bool, bool)> = BTreeMap::new();
    for m in states.values() {
        for e in &m.record.entries {
            let entry = roles.entry(e.slot.wave).or_default();
            if e.slot.role == LeaderRole::Fallback {
                entry.1 = true;
            } else if e.slot.role.is_steady_state() {
                entry.0 = true;
            }
        }
    }
    roles.values().all(|&(ss, fb)| !(ss && fb))
}

/// Bracketing: between two consecutive *direct* commits of one honest
/// validator, every leader committed by any honest validator must also
/// appear in the bracketing validator's record.
pub fn check_bracketing(states: &BTreeMap<ValidatorId, ProtocolState>) -> bool {
    let mut all: Vec<(Round, ValidatorId, LeaderRole, Wave)> = Vec::new();
    for m in states.values() {
        for e in &m.record.entries {
            all.push((e.slot.round, e.slot.validator, e.slot.role, e.slot.wave));
        }
    }
    all.sort();
    all.dedup();
    for m in states.values() {
        let directs: Vec<Round> = m
            .record
            .entries
            .iter()
            .filter(|e| e.kind == CommitKind::Direct)
            .map(|e| e.slot.round)
            .collect();
        for pair in directs.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            for &(r, v, role, w) in &all {
                if r <= lo || r >= hi {
                    continue;
                }
                let present = m
                    .record
                    .entries
                    .iter()
                    .any(|e| e.slot.round == r && e.slot.validator == v && e.slot.role == role && e.slot.wave == w);
                if !present {
                    return false;
                }
            }
        }
    }
    true
}

/// Metrics extracted from one finished run, measured at one honest
/// observer (the lowest honest id).
#[derive(Clone, Copy, Debug, Default)]
pub struct RunMetrics {
    pub waves: u32,
    pub direct_commits: u32,
    /// Sum and count of wave gaps between consecutive direct commits.
    pub gap_sum: u64,
    pub gap_count: u32,
}

pub fn run_metrics(states: &BTreeMap<ValidatorId, ProtocolState>) -> RunMetrics {
    let observer = states.values().next().expect("at least one honest validator");
    let mut waves: Vec<Wave> = observer
        .record
        .entries
        .iter()
        .filter(|e| e.kind == CommitKind::Direct)
        .map(|e| e.slot.wave)
        .collect();
    waves.sort();
    waves.dedup();
    let mut m = RunMetrics {
        waves: observer.completed_waves(),
        direct_commits: waves.len() as u32,
        ..RunMetrics::default()
    };
    for pair in waves.windows(2) {
        m.gap_sum += (pair[1] - pair[0]) as u64;
        m.gap_count += 1;
    }
    m
}

/// Aggregate of a batch of independent trials.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub trials: u32,
    pub waves_total: u64,
    pub commits_total: u64,
    pub commit_rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_waves_between: f64,
}

fn aggregate(metrics: &[RunMetrics]) -> ExperimentResult {
    let waves_total: u64 = metrics.iter().map(|m| m.waves as u64).sum();
    let commits_total: u64 = metrics.iter().map(|m| m.direct_commits as u64).sum();
    let rate = commits_total as f64 / waves_total.max(1) as f64;
    let sigma = (rate * (1.0 - rate) / waves_total.max(1) as f64).sqrt();
    let gap_sum: u64 = metrics.iter().map(|m| m.gap_sum).sum();
    let gap_count: u32 = metrics.iter().map(|m| m.gap_count).sum();
    ExperimentResult {
        trials: metrics.len() as u32,
        waves_total,
        commits_total,
        commit_rate: rate,
        ci_lo: rate - 1.96 * sigma,
        ci_hi: rate + 1.96 * sigma,
        mean_waves_between: gap_sum as f64 / gap_count.max(1) as f64,
    }
}

/// Runs `trials` independent simulations (seeds derived from the config
/// seed) in parallel and aggregates their metrics.
pub fn run_experiment(cfg: &SimConfig, trials: u32) -> ExperimentResult {
    let metrics: Vec<RunMetrics> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(t as u64 + 1));
            let r = run_sim(c);
            run_metrics(&r.states)
        })
        .collect();
    aggregate(&metrics)
}

/// Direct generative Monte Carlo for Tusk under random delays: per wave,
/// each of the `(k-1)f+1` vote-round vertices independently references the
/// leader with probability `(k-1)/k`; the wave commits on `f+1` such votes.
/// Mirrors the analytic binomial model, so the estimate must land inside
/// the analytic value's confidence interval.
pub fn tusk_random_delay_mc(k: u32, f: u32, waves: u64, seed: u64) -> ExperimentResult {
    let params = Params::new(k, f).expect("valid (k, f)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = params.strong_quorum();
    let t = params.weak_quorum();
    let mut commits = 0u64;
    let mut gaps: (u64, u32) = (0, 0);
    let mut last: Option<u64> = None;
    for w in 0..waves {
        let votes = (0..q).filter(|_| rng.gen_range(0..k) != 0).count() as u32;
        if votes >= t {
            commits += 1;
            if let Some(prev) = last {
                gaps.0 += w - prev;
                gaps.1 += 1;
            }
            last = Some(w);
        }
    }
    let rate = commits as f64 / waves as f64;
    let sigma = (rate * (1.0 - rate) / waves as f64).sqrt();
    ExperimentResult {
        trials: 1,
        waves_total: waves,
        commits_total: commits,
        commit_rate: rate,
        ci_lo: rate - 1.96 * sigma,
        ci_hi: rate + 1.96 * sigma,
        mean_waves_between: gaps.0 as f64 / gaps.1.max(1) as f64,
    }
}

/// One cell of the summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableCell {
    pub verdict: String,
    pub expectation: Option<BigRational>,
}

fn cell(protocol: TableProtocol, k: u32) -> TableCell {
    match expected_waves_analytic(protocol, k) {
        Analytic::NotSafe => TableCell { verdict: "not safe".into(), expectation: None },
        Analytic::NotLive => {
            TableCell { verdict: "safe, not live".into(), expectation: None }
        }
        Analytic::Value(v) => {
            TableCell { verdict: "safe, live".into(), expectation: Some(v) }
        }
    }
}

/// The summary verdict matrix for `k` in `{2, 3, 4}` (`k = 4` standing in
/// for the `k > 3` column, evaluated at `f = 1` where an `f` enters).
pub fn emit_table() -> Vec<(TableProtocol, Vec<TableCell>)> {
    [
        TableProtocol::DagRider,
        TableProtocol::Tusk,
        TableProtocol::TuskRandom,
        TableProtocol::BullsharkAsync,
        TableProtocol::BullsharkPsync,
    ]
    .into_iter()
    .map(|p| (p, [2u32, 3, 4].into_iter().map(|k| cell(p, k)).collect()))
    .collect()
}

pub fn render_table_text(table: &[(TableProtocol, Vec<TableCell>)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:<22} {:<22} {:<22}\n",
        "protocol", "k=2", "k=3", "k=4"
    ));
    let fmt_cell = |c: &TableCell| match (&c.expectation, c.verdict.as_str()) {
        (Some(v), "safe, live") => {
            format!("safe, {:.2} waves", v.to_f64().unwrap_or(f64::NAN))
        }
        _ => c.verdict.clone(),
    };
    for (p, cells) in table {
        out.push_str(&format!(
            "{:<18} {:<22} {:<22} {:<22}\n",
            p.name(),
            fmt_cell(&cells[0]),
            fmt_cell(&cells[1]),
            fmt_cell(&cells[2])
        ));
    }
    out
}

pub fn render_table_csv(table: &[(TableProtocol, Vec<TableCell>)]) -> String {
    let mut out = String::from("protocol,k,verdict,expected_waves\n");
    for (p, cells) in table {
        for (k, c) in [2u32, 3, 4].iter().zip(cells) {
            let exp = c
                .expectation
                .as_ref()
                .map(|v| format!("{v}"))
                .unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", p.name(), k, c.verdict, exp));
        }
    }
    out
}
