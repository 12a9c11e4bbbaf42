//! Command-line front end: run microprograms with a cost trace, sweep the
//! verification suites, and model CNN workloads.
//!
//! Every flag can also be set through the environment with the `RTCIM_`
//! prefix (`RTCIM_CONFIG`, `RTCIM_SEED`, `RTCIM_TRIALS`, `RTCIM_OUT`,
//! `RTCIM_MODE`). All machine output is JSON; layer breakdowns are CSV.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rtcim::alu;
use rtcim::config::DeviceConfig;
use rtcim::cost::{map_workload, CostLedger, Mode, Network, WorkloadReport};
use rtcim::exec::{Machine, Program, TraceEvent};
use rtcim::row::Row512;
use rtcim::verify::{self, Suite};

#[derive(Parser)]
#[command(name = "rtcim", version, about = "racetrack compute-in-memory simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a microprogram (or a built-in demo) and write its trace.
    Run(RunConfig),
    /// Sweep the machine-vs-reference suites and report pass/fail.
    Verify {
        /// Suite to run: device, int, fp, kernels or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, env = "RTCIM_SEED", default_value_t = 0)]
        seed: u64,
        /// Randomized trials per check.
        #[arg(long, env = "RTCIM_TRIALS", default_value_t = 500)]
        trials: u64,
        /// Report file (stdout when omitted).
        #[arg(long, env = "RTCIM_OUT")]
        out: Option<PathBuf>,
    },
    /// Model a network on the device and emit a workload report.
    Bench {
        /// lenet5, alexnet, vgg16, or a path to a network JSON file.
        net: String,
        /// Datapath mode: ternary, integer or fp32.
        #[arg(long, env = "RTCIM_MODE", default_value = "ternary")]
        mode: Mode,
        /// Device config JSON (defaults when omitted).
        #[arg(long, env = "RTCIM_CONFIG")]
        config: Option<PathBuf>,
        /// Report file; a sibling .csv with the layer table is written too.
        #[arg(long, env = "RTCIM_OUT")]
        out: Option<PathBuf>,
    },
    /// Render a saved workload report as a layer table.
    Report {
        /// Workload report JSON produced by `bench`.
        report: PathBuf,
        /// CSV output path (pretty text table on stdout when omitted).
        #[arg(long, env = "RTCIM_OUT")]
        out: Option<PathBuf>,
    },
}

/// Everything `run` needs: where the device comes from, what to execute,
/// the seed that fixes demo operands, and where outputs go.
#[derive(clap::Args)]
struct RunConfig {
    /// Microprogram text file, or a built-in demo: demo:add5, demo:multiply,
    /// demo:csa.
    program: String,
    /// Device config JSON (defaults when omitted).
    #[arg(long, env = "RTCIM_CONFIG")]
    config: Option<PathBuf>,
    /// Operand seed for the demos.
    #[arg(long, env = "RTCIM_SEED", default_value_t = 0)]
    seed: u64,
    /// Trace file (stdout when omitted).
    #[arg(long, env = "RTCIM_OUT")]
    out: Option<PathBuf>,
    /// Also print the executed op listing to stderr.
    #[arg(long, short)]
    verbose: bool,
}

/// JSON payload for `run`: the per-primitive event stream plus the ledger
/// it folds to.
#[derive(Serialize)]
struct RunTrace {
    source: String,
    seed: u64,
    ops_executed: usize,
    ledger: CostLedger,
    events: Vec<TraceEvent>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run(cfg) => cmd_run(cfg),
        Cmd::Verify {
            suite,
            seed,
            trials,
            out,
        } => cmd_verify(&suite, seed, trials, out.as_deref()),
        Cmd::Bench {
            net,
            mode,
            config,
            out,
        } => cmd_bench(&net, mode, config.as_deref(), out.as_deref()),
        Cmd::Report { report, out } => cmd_report(&report, out.as_deref()),
    }
}

fn load_config(path: Option<&Path>) -> Result<DeviceConfig> {
    let cfg = match path {
        Some(p) => DeviceConfig::load(p)?,
        None => DeviceConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => {
            stdout_line(text)?;
        }
    }
    Ok(())
}

/// Print one line to stdout; a closed pipe (e.g. `| head`) ends output
/// quietly instead of failing. Returns whether the pipe is still open.
fn stdout_line(text: &str) -> Result<bool> {
    use std::io::Write;
    match writeln!(std::io::stdout(), "{text}") {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(false),
        Err(e) => Err(e).context("writing to stdout"),
    }
}

fn cmd_run(cfg: RunConfig) -> Result<ExitCode> {
    let device = load_config(cfg.config.as_deref())?;
    device.require_cim()?;
    let mut m = Machine::new(device.geometry.geometry()?);

    let prog = if let Some(name) = cfg.program.strip_prefix("demo:") {
        demo_program(name, cfg.seed)?
    } else {
        let text = fs::read_to_string(&cfg.program)
            .with_context(|| format!("reading program {}", cfg.program))?;
        Program::parse(&text)?
    };

    m.enable_trace();
    if let Err(e) = m.run(&prog) {
        eprintln!("program failed: {e}");
        return Ok(ExitCode::from(1));
    }
    let events = m.take_trace();
    if cfg.verbose {
        for ev in &events {
            eprintln!("{:>5}  {}", ev.index, ev.op);
        }
    }
    let trace = RunTrace {
        source: cfg.program.clone(),
        seed: cfg.seed,
        ops_executed: events.len(),
        ledger: m.ledger(),
        events,
    };
    emit(cfg.out.as_deref(), &serde_json::to_string_pretty(&trace)?)?;
    Ok(ExitCode::SUCCESS)
}

/// Built-in demos with seed-determined operands. The add5 demo runs one
/// five-addend 16-bit add (one transverse read per result bit); multiply
/// runs an 8-bit lane-parallel multiply; csa runs a single seven-row
/// carry-save reduction.
fn demo_program(name: &str, seed: u64) -> Result<Program> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_row = |mask: u64, lane: usize| {
        let vals: Vec<u64> = (0..Row512::lanes(lane)).map(|_| rng.gen::<u64>() & mask).collect();
        Row512::from_lanes(lane, &vals)
    };
    let mut b = alu::Builder::new();
    match name {
        "add5" => {
            b.op(rtcim::exec::MicroOp::Lanes(32));
            b.write_at(0, Row512::ZERO);
            for i in 1..=5 {
                b.write_at(i, rand_row(0xffff, 32));
            }
            b.write_at(6, Row512::ZERO);
            alu::emit_add5(&mut b, 0, 32, 16, 0);
            b.read_at(0);
        }
        "multiply" => {
            b.op(rtcim::exec::MicroOp::Lanes(16));
            for r in 0..8 {
                b.write_at(r, Row512::ZERO);
            }
            b.write_at(alu::MUL_ROW_A, rand_row(0xff, 16));
            b.write_at(alu::MUL_ROW_B, rand_row(0xff, 16));
            alu::emit_multiply(&mut b, 8, 16);
        }
        "csa" => {
            b.op(rtcim::exec::MicroOp::Lanes(64));
            for r in 0..7 {
                b.write_at(r, rand_row(u64::MAX, 64));
            }
            alu::emit_csa(&mut b, 0, 64);
        }
        other => bail!("unknown demo {other:?} (expected add5, multiply or csa)"),
    }
    Ok(b.finish())
}

fn cmd_verify(suite: &str, seed: u64, trials: u64, out: Option<&Path>) -> Result<ExitCode> {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![suite.parse().map_err(anyhow::Error::msg)?]
    };
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let report = verify::run_suites(&suites, seed, trials);
    emit(out, &serde_json::to_string_pretty(&report)?)?;
    if report.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        for s in report.suites.iter().filter(|s| !s.passed) {
            for c in s.checks.iter().filter(|c| c.mismatches > 0) {
                eprintln!(
                    "FAIL {}/{}: {}/{} mismatched; reproduce with --suite {} --seed {seed} \
                     --trials {trials} ({})",
                    s.suite,
                    c.check,
                    c.mismatches,
                    c.trials,
                    s.suite,
                    c.first_mismatch.as_deref().unwrap_or("no detail"),
                );
            }
        }
        Ok(ExitCode::from(1))
    }
}

fn cmd_bench(net: &str, mode: Mode, config: Option<&Path>, out: Option<&Path>) -> Result<ExitCode> {
    let device = load_config(config)?;
    let network = match Network::by_name(net) {
        Some(n) => n,
        None => Network::from_json_file(Path::new(net))
            .with_context(|| format!("{net:?} is not a built-in network or a readable file"))?,
    };
    let report = map_workload(&network, mode, device.parallel_dbcs, &device.params)?;
    emit(out, &serde_json::to_string_pretty(&report)?)?;
    if let Some(json_path) = out {
        let csv_path = json_path.with_extension("csv");
        fs::write(&csv_path, report.to_csv())
            .with_context(|| format!("writing {}", csv_path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(report: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let text =
        fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
    let report: WorkloadReport = serde_json::from_str(&text)?;
    match out {
        Some(p) => {
            fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?
        }
        None => print_table(&report)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn print_table(r: &WorkloadReport) -> Result<()> {
    let mut lines = vec![
        format!(
            "{} in {} mode on {} DBCs: {:.3} ms/frame, {:.1} FPS, {:.3} GFLOPS, {:.3} W",
            r.network, r.mode, r.parallel_dbcs, r.latency_s * 1e3, r.fps, r.gflops, r.power_w
        ),
        format!(
            "{:<24} {:>10} {:>14} {:>14} {:>12}",
            "layer", "calls", "cycles", "latency_s", "energy_j"
        ),
    ];
    lines.extend(r.layers.iter().map(|l| {
        format!(
            "{:<24} {:>10} {:>14} {:>14.6e} {:>12.4e}",
            l.name, l.calls, l.ledger.cycles, l.latency_s, l.energy_j
        )
    }));
    for line in lines {
        if !stdout_line(&line)? {
            break;
        }
    }
    Ok(())
}
