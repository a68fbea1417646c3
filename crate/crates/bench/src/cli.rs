//! Command-line front end. Exit codes: 0 on success, 1 on invalid input,
//! 2 when an internal invariant is violated.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use quancurrent::analysis::{eh_region_bound, eh_total_bound, epsilon_total, p_bound, regions, RelaxationModel};
use serde::Serialize;

use crate::affinity::available_cores;
use crate::report::{emit, Format};
use crate::workload::{run_accuracy, run_holes, run_stderr, run_throughput, Dist, Engine, Mode, WorkloadSpec};
use crate::Result;

#[derive(Debug, Parser)]
#[command(name = "quancurrent-bench", version, about = "Concurrent quantiles sketch experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Summary size.
    #[arg(long, default_value_t = 4096)]
    k: usize,
    /// Thread-local buffer size; must divide 2k.
    #[arg(long, default_value_t = 16)]
    b: usize,
    /// Update threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    query_threads: usize,
    /// Ingest units; update threads are assigned to them in blocks.
    #[arg(long, default_value_t = 1)]
    numa_nodes: usize,
    /// Fractional stream growth tolerated before a cached snapshot is refreshed.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, value_enum, default_value_t = Dist::Uniform)]
    dist: Dist,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stream size (queries for query-only throughput).
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    prefill: u64,
    #[arg(long, default_value_t = 15)]
    runs: usize,
    /// Output file; defaults to $QUANCURRENT_OUT_DIR/<command>.<ext>, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Do not pin worker threads to cores.
    #[arg(long)]
    no_pin: bool,
}

impl Common {
    fn spec(&self, mode: Mode) -> WorkloadSpec {
        WorkloadSpec {
            mode,
            update_threads: self.threads,
            query_threads: self.query_threads,
            n: self.n,
            prefill: self.prefill,
            k: self.k,
            b: self.b,
            numa_nodes: self.numa_nodes,
            rho: self.rho,
            dist: self.dist,
            seed: self.seed,
            runs: self.runs,
            pin: !self.no_pin,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Update-only, query-only or mixed throughput.
    Throughput {
        #[arg(long, value_enum, default_value_t = Mode::UpdateOnly)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Rank error on the percentile grid against exact answers.
    Accuracy {
        #[command(flatten)]
        common: Common,
    },
    /// Standard error of normalized ranks over repeated runs.
    Stderr {
        #[arg(long, value_enum, default_value_t = Engine::Concurrent)]
        engine: Engine,
        #[command(flatten)]
        common: Common,
    },
    /// Simulated, closed-form and end-to-end holes per batch.
    Holes {
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form calculators.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
}

#[derive(Debug, Subcommand)]
enum Analyze {
    /// Buffered updates a query may miss.
    Relaxation {
        #[command(flatten)]
        common: Common,
    },
    /// Total rank error including relaxation and staleness.
    Epsilon {
        /// Rank error of the sequential sketch.
        #[arg(long, default_value_t = 0.01)]
        eps_c: f64,
        #[arg(long, default_value_t = 0.01)]
        delta_c: f64,
        /// Staleness fraction; defaults to --rho.
        #[arg(long)]
        eps_prime: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form hole bounds.
    Holes {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Serialize)]
struct RelaxationRow {
    k: usize,
    numa_nodes: usize,
    update_threads: usize,
    b: usize,
    r: u64,
}

#[derive(Serialize)]
struct EpsilonRow {
    k: usize,
    numa_nodes: usize,
    update_threads: usize,
    b: usize,
    n: u64,
    eps_c: f64,
    delta_c: f64,
    eps_prime: f64,
    r: u64,
    eps_relaxed: f64,
    eps_total: f64,
}

#[derive(Serialize)]
struct BoundRow {
    b: usize,
    k: usize,
    regions: u64,
    p_first_region: f64,
    first_region_bound: f64,
    total_bound: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn warn_oversubscribed(spec: &WorkloadSpec) {
    let want = spec.update_threads + spec.query_threads;
    let have = available_cores();
    if want > have {
        eprintln!("warning: {want} worker threads on {have} available cores");
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Throughput { mode, common } => {
            let spec = common.spec(mode);
            warn_oversubscribed(&spec);
            let rows = run_throughput(&spec)?;
            emit(&rows, common.format, common.out.as_deref(), "throughput")
        }
        Command::Accuracy { common } => {
            let (rows, s) = run_accuracy(&common.spec(Mode::UpdateOnly))?;
            eprintln!(
                "max rank error {:.6} (sequential {:.6}, relaxation allowance {:.6})",
                s.max_rank_error, s.seq_max_rank_error, s.relaxation_allowance
            );
            emit(&rows, common.format, common.out.as_deref(), "accuracy")
        }
        Command::Stderr { engine, common } => {
            let rows = run_stderr(&common.spec(Mode::UpdateOnly), engine)?;
            emit(&rows, common.format, common.out.as_deref(), "stderr")
        }
        Command::Holes { trials, common } => {
            let row = run_holes(&common.spec(Mode::UpdateOnly), trials)?;
            emit(&[row], common.format, common.out.as_deref(), "holes")
        }
        Command::Analyze { what } => analyze(what),
    }
}

fn analyze(what: Analyze) -> Result<()> {
    match what {
        Analyze::Relaxation { common } => {
            let r = common.spec(Mode::UpdateOnly).relaxation()?;
            let row = RelaxationRow {
                k: common.k,
                numa_nodes: common.numa_nodes,
                update_threads: common.threads,
                b: common.b,
                r,
            };
            emit(&[row], common.format, common.out.as_deref(), "relaxation")
        }
        Analyze::Epsilon {
            eps_c,
            delta_c,
            eps_prime,
            common,
        } => {
            let model = RelaxationModel {
                k: common.k as u64,
                numa_nodes: common.numa_nodes as u64,
                update_threads: common.threads as u64,
                b: common.b as u64,
                epsilon_c: eps_c,
                delta_c,
                epsilon_prime: eps_prime.unwrap_or(common.rho),
                n: common.n,
            };
            let row = EpsilonRow {
                k: common.k,
                numa_nodes: common.numa_nodes,
                update_threads: common.threads,
                b: common.b,
                n: common.n,
                eps_c,
                delta_c,
                eps_prime: model.epsilon_prime,
                r: model.relaxation()?,
                eps_relaxed: model.epsilon_relaxed()?,
                eps_total: epsilon_total(&model)?,
            };
            emit(&[row], common.format, common.out.as_deref(), "epsilon")
        }
        Analyze::Holes { common } => {
            let (b, k) = (common.b as u64, common.k as u64);
            let row = BoundRow {
                b: common.b,
                k: common.k,
                regions: regions(b, k)?,
                p_first_region: p_bound(1, b)?.to_f64(),
                first_region_bound: eh_region_bound(1, b)?.to_f64(),
                total_bound: eh_total_bound(b, k)?.to_f64(),
            };
            emit(&[row], common.format, common.out.as_deref(), "bounds")
        }
    }
}
