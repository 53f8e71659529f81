//! End-to-end acceptance suite. Each test covers one acceptance criterion
//! and prints a single `[PASS] ...` line (visible with `--nocapture`); a
//! failing assertion marks the criterion red.

use num_rational::BigRational;
use quorumdag::analysis::{
    check_bracketing, check_common_core, check_leader_path_safety, check_no_mixed_wave_commits,
    check_total_order, commit_probability_analytic, emit_table, rat, run_experiment,
    tusk_random_delay_mc, Analytic, ProbModel, TableProtocol,
};
use quorumdag::broadcast::{
    model_check_equivocation_f1, randomized_equivocation_run, randomized_validity_run,
};
use quorumdag::protocols::{first_ss_leader, second_ss_leader};
use quorumdag::scenarios::{
    bullshark_safety_scenario, replay, tusk_liveness_contrast, tusk_liveness_scenario,
    SafetyVariant,
};
use quorumdag::sim::{run_sim, ByzBehavior, DelayModel, RunResult, SimConfig};
use quorumdag::{CommitKind, LeaderRole, Params, ProtocolKind};
use rayon::prelude::*;

fn pass(criterion: u32, name: &str, detail: &str) {
    println!("[PASS] criterion-{criterion:02} {name}: {detail}");
}

fn adversarial_cfg(
    kind: ProtocolKind,
    k: u32,
    f: u32,
    waves: u32,
    seed: u64,
    byz: ByzBehavior,
) -> SimConfig {
    let mut cfg = SimConfig::new(Params::new(k, f).unwrap(), kind);
    cfg.delay = DelayModel::Adversarial;
    cfg.byz_count = f;
    cfg.byz = byz;
    cfg.wave_budget = waves;
    cfg.seed = seed;
    cfg
}

fn adversarial_runs(
    kind: ProtocolKind,
    k: u32,
    f: u32,
    waves: u32,
    runs: u64,
    base_seed: u64,
) -> Vec<RunResult> {
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let byz = if i % 2 == 0 {
                ByzBehavior::Silent
            } else {
                ByzBehavior::AdversarialParents
            };
            run_sim(adversarial_cfg(kind, k, f, waves, base_seed + i, byz))
        })
        .collect()
}

#[test]
fn criterion_01_table_verdicts() {
    let table = emit_table();
    let expect: &[(&str, [&str; 3])] = &[
        ("dagrider", ["safe, live", "safe, live", "safe, live"]),
        ("tusk", ["safe, not live", "safe, live", "safe, live"]),
        ("tusk-random", ["safe, live", "safe, live", "safe, live"]),
        ("bullshark-async", ["not safe", "safe, live", "safe, live"]),
        ("bullshark-psync", ["safe, live", "safe, live", "safe, live"]),
    ];
    assert_eq!(table.len(), expect.len());
    for ((proto, cells), (name, verdicts)) in table.iter().zip(expect) {
        assert_eq!(proto.name(), *name);
        assert_eq!(cells.len(), 3);
        for (cell, want) in cells.iter().zip(verdicts) {
            assert_eq!(
                cell.verdict, *want,
                "{} verdict mismatch: got '{}', want '{}'",
                name, cell.verdict, want
            );
        }
    }
    pass(1, "table-verdicts", "all 15 cells (5 protocols x k in 2..4) match");
}

#[test]
fn criterion_02_tusk_k2_liveness() {
    let start = std::time::Instant::now();
    let waves = 100;
    let out = replay(&tusk_liveness_scenario(waves));
    let commits: usize = out.states.values().map(|m| m.record.entries.len()).sum();
    assert_eq!(commits, 0, "expected zero commits at every honest validator");
    for m in out.states.values() {
        assert!(
            m.completed_waves() >= waves,
            "DAG construction stalled before {waves} waves"
        );
    }
    let c = tusk_liveness_contrast();
    let max = *c.votes.values().max().unwrap();
    assert!(max < c.k2_threshold, "k=2 threshold must reject every leader");
    assert!(max >= c.k3_threshold, "k=3 threshold must accept the leader");
    assert!(start.elapsed().as_secs() < 5, "must finish in under 5 s");
    pass(
        2,
        "tusk-k2-liveness",
        &format!(
            "0 commits over {waves} waves; best support {max} < {} (k=2) but >= {} (k=3)",
            c.k2_threshold, c.k3_threshold
        ),
    );
}

#[test]
fn criterion_03_bullshark_async_k2_safety() {
    let start = std::time::Instant::now();
    let base = replay(&bullshark_safety_scenario(SafetyVariant::Base));
    assert!(
        base.violations
            .iter()
            .any(|(_, v)| matches!(v, quorumdag::Violation::AmbiguousIndirect { .. })),
        "the ambiguous-indirect event must occur"
    );
    let mut conflicts = 0;
    for variant in [SafetyVariant::Base, SafetyVariant::ForcedSs, SafetyVariant::ForcedFb] {
        let out = replay(&bullshark_safety_scenario(variant));
        assert!(
            check_total_order(&out.states).is_err(),
            "variant {variant:?} must exhibit conflicting commits"
        );
        conflicts += 1;
    }
    assert!(start.elapsed().as_secs() < 5, "must finish in under 5 s");
    pass(
        3,
        "bullshark-async-k2-safety",
        &format!("ambiguous-indirect raised; {conflicts}/3 completions give conflicting commits"),
    );
}

#[test]
fn criterion_04_analytic_probabilities_exact() {
    let cases: &[(u32, i64, i64)] = &[(2, 1, 4), (3, 20, 27), (4, 243, 256), (5, 3104, 3125)];
    for &(k, num, den) in cases {
        let got = commit_probability_analytic(TableProtocol::Tusk, k, 1, ProbModel::RandomDelay);
        assert_eq!(
            got,
            Analytic::Value(rat(num, den)),
            "k={k} random-delay probability must be exactly {num}/{den}"
        );
    }
    pass(4, "analytic-probabilities", "1/4, 20/27, 243/256, 3104/3125 exact");
}

#[test]
fn criterion_05_monte_carlo_matches_analytic() {
    let start = std::time::Instant::now();
    for (k, seed) in [(2u32, 11u64), (3, 12), (4, 13), (5, 14)] {
        let point = std::time::Instant::now();
        let mc = tusk_random_delay_mc(k, 1, 10_000, seed);
        let analytic = commit_probability_analytic(TableProtocol::Tusk, k, 1, ProbModel::RandomDelay);
        let p = rational_to_f64(analytic.value().unwrap());
        assert!(
            mc.ci_lo <= p && p <= mc.ci_hi,
            "k={k}: analytic {p:.4} outside MC 95% CI [{:.4}, {:.4}]",
            mc.ci_lo,
            mc.ci_hi
        );
        assert!(point.elapsed().as_secs() < 120, "each (k,f) point must take < 2 min");
    }
    pass(
        5,
        "monte-carlo-vs-analytic",
        &format!("4 points x 10,000 waves inside 95% CI in {:?}", start.elapsed()),
    );
}

fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap()
}

#[test]
fn criterion_06_expected_waves_per_commit() {
    let mut details = Vec::new();
    // DAG-Rider and asynchronous Bullshark, k = 3, f in {1, 2, 3}: both the
    // benign random-delay model and the coin-gated adversarial scheduler
    // must stay within 10% of the k/(k-1) waves-per-commit target.
    for kind in [ProtocolKind::DagRider, ProtocolKind::BullsharkAsync] {
        for f in [1u32, 2, 3] {
            for delay in [DelayModel::RandomUniform { lo: 1, hi: 10 }, DelayModel::Adversarial] {
                let mut cfg = SimConfig::new(Params::new(3, f).unwrap(), kind);
                cfg.delay = delay;
                cfg.byz_count = f;
                cfg.wave_budget = 40;
                cfg.seed = 0x6_0000 + f as u64;
                let r = run_experiment(&cfg, 25);
                assert!(
                    r.mean_waves_between <= 1.65,
                    "{} f={f} {delay:?}: mean {:.3} exceeds 1.65",
                    cfg.kind.name(),
                    r.mean_waves_between
                );
                details.push(format!("{} f={f} {:.2}", cfg.kind.name(), r.mean_waves_between));
            }
        }
    }
    // Tusk, k = 3, adversarial-bound model.
    let mut cfg = SimConfig::new(Params::new(3, 1).unwrap(), ProtocolKind::Tusk);
    cfg.delay = DelayModel::Adversarial;
    cfg.byz_count = 1;
    cfg.wave_budget = 40;
    cfg.seed = 0x6_1000;
    let r = run_experiment(&cfg, 25);
    assert!(
        r.mean_waves_between <= 3.3,
        "tusk adversarial mean {:.3} exceeds 3.3",
        r.mean_waves_between
    );
    details.push(format!("tusk-adv {:.2}", r.mean_waves_between));
    // Tusk with random delays: within 10% of 27/20.
    let g = tusk_random_delay_mc(3, 1, 100_000, 0x6_2000);
    let target = 27.0 / 20.0;
    assert!(
        (g.mean_waves_between - target).abs() <= 0.1 * target,
        "tusk-random mean {:.3} not within 10% of {target}",
        g.mean_waves_between
    );
    details.push(format!("tusk-random {:.3}", g.mean_waves_between));
    pass(6, "expected-waves-per-commit", &details.join(", "));
}

#[test]
fn criterion_07_common_core_every_wave() {
    let configs = [(2u32, 1u32), (2, 2), (3, 1), (3, 2)];
    let mut checked_waves = 0u64;
    for (i, &(k, f)) in configs.iter().enumerate() {
        let runs = adversarial_runs(ProtocolKind::DagRider, k, f, 5, 250, 0x7_0000 + i as u64 * 1000);
        for r in &runs {
            assert!(!r.truncated, "run exhausted its event budget");
            let observer = r.states.values().next().unwrap();
            for w in 1..=observer.completed_waves() {
                assert!(
                    check_common_core(&observer.dag, w).is_some(),
                    "no common core in wave {w} (k={k}, f={f})"
                );
                checked_waves += 1;
            }
        }
    }
    pass(
        7,
        "common-core",
        &format!("core found in all {checked_waves} completed waves across 1,000 runs"),
    );
}

#[test]
fn criterion_08_safety_lemma_oracles() {
    let configs: &[(ProtocolKind, u32, u32)] = &[
        (ProtocolKind::DagRider, 2, 1),
        (ProtocolKind::DagRider, 3, 1),
        (ProtocolKind::Tusk, 2, 1),
        (ProtocolKind::Tusk, 3, 1),
        (ProtocolKind::BullsharkAsync, 3, 1),
        (ProtocolKind::BullsharkPsync, 2, 1),
    ];
    let mut total = 0u64;
    for (i, &(kind, k, f)) in configs.iter().enumerate() {
        let runs = adversarial_runs(kind, k, f, 5, 1000, 0x8_0000 + i as u64 * 10_000);
        for r in &runs {
            assert!(
                check_leader_path_safety(&r.states),
                "{} k={k}: committed leader misses a path to an earlier direct commit",
                kind.name()
            );
            assert!(
                check_total_order(&r.states).is_ok(),
                "{} k={k}: honest orders are not prefix-consistent",
                kind.name()
            );
            if kind == ProtocolKind::BullsharkAsync {
                assert!(
                    check_no_mixed_wave_commits(&r.states),
                    "a wave committed both a steady-state and a fallback leader"
                );
                assert!(
                    check_bracketing(&r.states),
                    "a leader between two direct commits is missing from the bracketing record"
                );
            }
            total += 1;
        }
    }
    pass(
        8,
        "safety-lemma-oracles",
        &format!("zero violations across {total} adversarial runs over 6 configurations"),
    );
}

#[test]
fn criterion_09_bullshark_psync_liveness() {
    let delta = 2u64;
    for (k, f) in [(2u32, 1u32), (2, 2), (3, 1), (3, 2)] {
        let params = Params::new(k, f).unwrap();
        let n = params.n();
        // First wave whose two predefined leaders are both honest (the
        // Byzantine validators are the highest-numbered f ids).
        let wave = (1..=16)
            .find(|&w| {
                u32::from(first_ss_leader(&params, w)) < n - f
                    && u32::from(second_ss_leader(&params, w)) < n - f
            })
            .expect("an honest-leader wave exists");
        let ok = (0..100u64).into_par_iter().all(|seed| {
            let mut cfg = SimConfig::new(params, ProtocolKind::BullsharkPsync);
            cfg.delay = DelayModel::PartialSync { gst: 0, delta };
            cfg.timeout = 4 * delta;
            cfg.byz_count = f;
            cfg.wave_budget = wave + 2;
            cfg.seed = 0x9_0000 + seed;
            let r = run_sim(cfg);
            r.states.values().all(|m| {
                m.record.entries.iter().any(|e| {
                    e.slot.wave == wave
                        && e.slot.role == LeaderRole::SecondSs
                        && e.kind == CommitKind::Direct
                })
            })
        });
        assert!(ok, "k={k} f={f}: some honest validator missed the direct commit");
    }
    pass(
        9,
        "bullshark-psync-liveness",
        "100/100 seeds direct-commit the honest wave's second leader for each (k, f)",
    );
}

#[test]
fn criterion_10_witness_broadcast() {
    let report = model_check_equivocation_f1();
    assert!(
        !report.agreement_violated,
        "exhaustive f=1 search found conflicting deliveries"
    );
    assert!(report.states_explored > 1000, "model check explored too little");
    for f in [2u32, 3] {
        let equivocation_ok = (0..1000u64)
            .into_par_iter()
            .all(|s| !randomized_equivocation_run(f, 0xA_0000 + s).agreement_violated);
        assert!(equivocation_ok, "f={f}: equivocation produced conflicting deliveries");
        let validity_ok = (0..1000u64)
            .into_par_iter()
            .all(|s| !randomized_validity_run(f, 0xA_8000 + s).validity_violated);
        assert!(validity_ok, "f={f}: honest-sender validity failed");
    }
    pass(
        10,
        "witness-broadcast",
        &format!(
            "f=1 exhaustive ({} states) + f in 2..3 randomized (1,000 each): zero conflicts, validity 100%",
            report.states_explored
        ),
    );
}

#[test]
fn criterion_11_determinism() {
    let configs = [
        (ProtocolKind::Tusk, 3u32, 1u32, DelayModel::RandomUniform { lo: 1, hi: 10 }),
        (ProtocolKind::DagRider, 2, 2, DelayModel::Adversarial),
        (ProtocolKind::BullsharkPsync, 2, 1, DelayModel::PartialSync { gst: 20, delta: 2 }),
    ];
    for (kind, k, f, delay) in configs {
        let run = || {
            let mut cfg = SimConfig::new(Params::new(k, f).unwrap(), kind);
            cfg.delay = delay;
            cfg.byz_count = f;
            cfg.wave_budget = 6;
            cfg.seed = 0xB_0000;
            cfg.log = true;
            run_sim(cfg)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.trace, b.trace, "{}: traces differ between identical runs", kind.name());
        assert_eq!(a.events, b.events);
        assert_eq!(a.final_time, b.final_time);
        for (id, m) in &a.states {
            let other = &b.states[id];
            assert_eq!(m.record.entries, other.record.entries);
            assert_eq!(m.record.order, other.record.order);
        }
    }
    pass(11, "determinism", "byte-identical traces on three representative configs");
}
