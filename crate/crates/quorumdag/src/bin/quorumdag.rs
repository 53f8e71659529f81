//! Command-line front end: one-off simulations, scripted scenario replays,
//! Monte Carlo batches, and the summary verdict table.
//!
//! Exit codes: 0 success (or scenario verdict reproduced), 1 usage error,
//! 2 unexpected safety violation, 3 scenario verdict not reproduced.
//! `QUORUMDAG_LOG={off|events|full}` controls trace output on stderr.

use clap::{Args, Parser, Subcommand, ValueEnum};
use quorumdag::analysis::{
    check_total_order, commit_probability_analytic, emit_table, render_table_csv,
    render_table_text, run_experiment, tusk_random_delay_mc, Analytic, ProbModel, TableProtocol,
};
use quorumdag::protocols::ProtocolKind;
use quorumdag::scenarios::{
    bullshark_safety_scenario, replay, tusk_liveness_contrast, tusk_liveness_scenario,
    SafetyVariant,
};
use quorumdag::sim::{run_sim, ByzBehavior, DelayModel, SimConfig};
use quorumdag::Params;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "quorumdag", about = "DAG BFT with n = kf + 1 validators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Dagrider,
    Tusk,
    BullsharkAsync,
    BullsharkPsync,
}

impl ProtocolArg {
    fn kind(self) -> ProtocolKind {
        match self {
            ProtocolArg::Dagrider => ProtocolKind::DagRider,
            ProtocolArg::Tusk => ProtocolKind::Tusk,
            ProtocolArg::BullsharkAsync => ProtocolKind::BullsharkAsync,
            ProtocolArg::BullsharkPsync => ProtocolKind::BullsharkPsync,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DelayArg {
    Adversarial,
    Random,
    Psync,
}

#[derive(Clone, Copy, ValueEnum)]
enum BroadcastArg {
    /// Direct point-to-point vertex delivery.
    Ideal,
    /// Witness-assisted echo broadcast (k = 2 layouts).
    Teeless,
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long, value_enum, default_value = "tusk")]
    protocol: ProtocolArg,
    #[arg(long, default_value_t = 3)]
    k: u32,
    #[arg(long, default_value_t = 1)]
    f: u32,
    #[arg(long, value_enum, default_value = "random")]
    delay: DelayArg,
    /// Global stabilization time (psync delay model).
    #[arg(long, default_value_t = 0)]
    gst: u64,
    /// Post-GST delay bound (psync delay model).
    #[arg(long, default_value_t = 2)]
    delta: u64,
    /// Round-timer duration for the Bullshark variants.
    #[arg(long, default_value_t = 40)]
    timeout: u64,
    #[arg(long, default_value_t = 10)]
    waves: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of Byzantine (silent) validators, at most f.
    #[arg(long, default_value_t = 0)]
    byz: u32,
    #[arg(long, value_enum, default_value = "ideal")]
    broadcast: BroadcastArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and report per-validator commit records.
    Simulate(CommonArgs),
    /// Replay a named scripted scenario and verify its expected verdict.
    Scenario {
        /// One of: tusk-k2-liveness, bullshark-async-k2-safety.
        name: String,
    },
    /// Monte Carlo batches; writes experiments.csv when --out is given.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100)]
        trials: u32,
    },
    /// Emit the per-protocol verdict table (text + table.csv with --out).
    Table {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn build_config(a: &CommonArgs) -> Result<SimConfig, String> {
    let params = Params::new(a.k, a.f).map_err(|e| format!("{e:?}"))?;
    let mut cfg = SimConfig::new(params, a.protocol.kind());
    cfg.delay = match a.delay {
        DelayArg::Adversarial => DelayModel::Adversarial,
        DelayArg::Random => DelayModel::RandomUniform { lo: 1, hi: 10 },
        DelayArg::Psync => DelayModel::PartialSync { gst: a.gst, delta: a.delta },
    };
    if matches!(cfg.kind, ProtocolKind::BullsharkPsync)
        && matches!(a.delay, DelayArg::Adversarial)
    {
        return Err("bullshark-psync requires the random or psync delay model".into());
    }
    if a.byz > a.f {
        return Err("--byz may not exceed --f".into());
    }
    cfg.byz_count = a.byz;
    cfg.byz = ByzBehavior::Silent;
    cfg.wave_budget = a.waves;
    cfg.timeout = a.timeout;
    cfg.seed = a.seed;
    cfg.use_witness_broadcast = matches!(a.broadcast, BroadcastArg::Teeless);
    if cfg.use_witness_broadcast && a.k != 2 {
        return Err("--broadcast teeless requires --k 2".into());
    }
    cfg.log = !matches!(log_level().as_str(), "off");
    Ok(cfg)
}

fn log_level() -> String {
    std::env::var("QUORUMDAG_LOG").unwrap_or_else(|_| "off".into())
}

fn write_out(dir: &Option<PathBuf>, name: &str, contents: &str) {
    if let Some(d) = dir {
        std::fs::create_dir_all(d).expect("create output dir");
        std::fs::write(d.join(name), contents).expect("write output file");
    }
}

fn simulate(a: &CommonArgs) -> ExitCode {
    let cfg = match build_config(a) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let r = run_sim(cfg);
    if log_level() != "off" {
        for line in &r.trace {
            if log_level() == "full" || !line.starts_with("RB ") {
                eprintln!("{line}");
            }
        }
    }
    let mut metrics = String::from("validator,waves,commits,order_len\n");
    for (id, m) in &r.states {
        println!(
            "validator {id}: round {} waves {} commits {} ordered {}",
            m.current_round(),
            m.completed_waves(),
            m.record.entries.len(),
            m.record.order.len()
        );
        metrics.push_str(&format!(
            "{id},{},{},{}\n",
            m.completed_waves(),
            m.record.entries.len(),
            m.record.order.len()
        ));
    }
    write_out(&a.out, "metrics.csv", &metrics);
    if let Err(c) = check_total_order(&r.states) {
        eprintln!(
            "safety violation: validators {} and {} diverge at index {}",
            c.a, c.b, c.index
        );
        return ExitCode::from(2);
    }
    if !r.violations.is_empty() {
        eprintln!("safety violation: {:?}", r.violations);
        return ExitCode::from(2);
    }
    if r.truncated {
        eprintln!("warning: event budget exhausted before wave budget");
    }
    ExitCode::SUCCESS
}

fn scenario(name: &str) -> ExitCode {
    match name {
        "tusk-k2-liveness" => {
            let waves = 100;
            let out = replay(&tusk_liveness_scenario(waves));
            let commits: usize =
                out.states.values().map(|m| m.record.entries.len()).sum();
            let stalled = out.states.values().any(|m| (m.completed_waves()) < waves);
            println!("0 commits expected: observed {commits} commits / {waves} waves");
            let c = tusk_liveness_contrast();
            let max = *c.votes.values().max().unwrap();
            println!(
                "max leader support {max}: k=2 threshold {} (no commit), k=3 threshold {} (commit)",
                c.k2_threshold, c.k3_threshold
            );
            let reproduced =
                commits == 0 && !stalled && max < c.k2_threshold && max >= c.k3_threshold;
            if reproduced {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        "bullshark-async-k2-safety" => {
            let base = replay(&bullshark_safety_scenario(SafetyVariant::Base));
            let ambiguous = !base.violations.is_empty();
            println!("ambiguous-indirect events: {:?}", base.violations);
            let mut reproduced = ambiguous;
            for (variant, pair) in [
                (SafetyVariant::Base, (3u8, 4u8)),
                (SafetyVariant::ForcedSs, (3, 4)),
                (SafetyVariant::ForcedFb, (3, 2)),
            ] {
                let out = replay(&bullshark_safety_scenario(variant));
                let conflict = check_total_order(&out.states).is_err();
                println!(
                    "variant {variant:?}: conflicting commits between validators {} and {}: {}",
                    pair.0, pair.1, conflict
                );
                reproduced &= conflict;
            }
            if reproduced {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        other => {
            eprintln!(
                "unknown scenario '{other}'; available: tusk-k2-liveness, bullshark-async-k2-safety"
            );
            ExitCode::from(1)
        }
    }
}

fn analyze(common: &CommonArgs, trials: u32) -> ExitCode {
    let cfg = match build_config(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let model = match common.delay {
        DelayArg::Adversarial => "adversarial",
        DelayArg::Random => "random",
        DelayArg::Psync => "psync",
    };
    let r = run_experiment(&cfg, trials);
    let table_protocol = match cfg.kind {
        ProtocolKind::DagRider => TableProtocol::DagRider,
        ProtocolKind::Tusk => TableProtocol::Tusk,
        ProtocolKind::BullsharkAsync => TableProtocol::BullsharkAsync,
        ProtocolKind::BullsharkPsync => TableProtocol::BullsharkPsync,
    };
    println!(
        "{} k={} f={} {}: commit rate {:.4} [{:.4}, {:.4}], mean waves between {:.3}",
        cfg.kind.name(),
        common.k,
        common.f,
        model,
        r.commit_rate,
        r.ci_lo,
        r.ci_hi,
        r.mean_waves_between
    );
    let prob_model = if matches!(common.delay, DelayArg::Adversarial) {
        ProbModel::AdversarialBound
    } else {
        ProbModel::RandomDelay
    };
    if let Analytic::Value(p) =
        commit_probability_analytic(table_protocol, common.k, common.f, prob_model)
    {
        println!("analytic bound: {p}");
    }
    if matches!(cfg.kind, ProtocolKind::Tusk) && !matches!(common.delay, DelayArg::Adversarial) {
        let g = tusk_random_delay_mc(common.k, common.f, 10_000, cfg.seed);
        println!(
            "generative binomial model: rate {:.4} [{:.4}, {:.4}]",
            g.commit_rate, g.ci_lo, g.ci_hi
        );
    }
    let mut csv = String::from(
        "protocol,k,f,model,trials,waves,commit_rate,ci_lo,ci_hi,mean_waves_between\n",
    );
    csv.push_str(&format!(
        "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
        cfg.kind.name(),
        common.k,
        common.f,
        model,
        r.trials,
        r.waves_total,
        r.commit_rate,
        r.ci_lo,
        r.ci_hi,
        r.mean_waves_between
    ));
    write_out(&common.out, "experiments.csv", &csv);
    ExitCode::SUCCESS
}

fn table(out: &Option<PathBuf>) -> ExitCode {
    let t = emit_table();
    print!("{}", render_table_text(&t));
    write_out(out, "table.csv", &render_table_csv(&t));
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Scenario { name } => scenario(name),
        Cmd::Analyze { common, trials } => analyze(common, *trials),
        Cmd::Table { out } => table(out),
    }
}
