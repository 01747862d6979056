//! `otm`: run, explore and check open-transaction programs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use otm::history::{check_opaque_with, History, Verdict};
use otm::machine::{explore, ExploreConfig, Machine, MachineError, Policy, RunOutcome};
use otm::runtime::{Runtime, RuntimeConfig};
use otm::scenarios::{self, Params};
use otm::syntax::{self, SourceProgram};

const EXIT_ERROR: u8 = 1;
const EXIT_DEADLOCK: u8 = 2;
const EXIT_NOT_OPAQUE: u8 = 3;
const EXIT_PARSE: u8 = 4;

#[derive(Parser)]
#[command(name = "otm", version, about = "Open transactional memory toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario or program file once.
    Run {
        /// Scenario name or path to a .otm file.
        target: String,
        #[arg(long, value_enum, default_value_t = Engine::Ref)]
        engine: Engine,
        /// Scheduler seed for the reference engine.
        #[arg(long, env = "OTM_SEED", default_value_t = 0)]
        seed: u64,
        /// Scenario thread count.
        #[arg(long)]
        threads: Option<usize>,
        /// Scenario iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Characters available to getChar.
        #[arg(long, default_value = "")]
        input: String,
        /// Write the recorded history here, one JSON event per line.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Concurrent engine: report a deadlock after this long without progress.
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        /// Reference engine step limit.
        #[arg(long, default_value_t = 10_000_000)]
        max_steps: usize,
    },
    /// Enumerate every schedule and print the distinct terminal states.
    Explore {
        target: String,
        #[arg(long, default_value_t = 200)]
        max_depth: usize,
        /// Maximum number of distinct states.
        #[arg(long, default_value_t = 200_000)]
        budget: usize,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, default_value = "")]
        input: String,
    },
    /// Decide opacity of a recorded history.
    CheckOpacity {
        trace: PathBuf,
        /// Largest transaction count for which every order is tried.
        #[arg(long, default_value_t = 10)]
        max_brute_force: usize,
    },
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Engine {
    /// Small-step reference machine with a seeded scheduler.
    Ref,
    /// Multi-threaded runtime.
    Concurrent,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            target,
            engine,
            seed,
            threads,
            iterations,
            input,
            trace,
            timeout_ms,
            max_steps,
        } => load(&target, threads, iterations).and_then(|p| {
            let opts = RunOpts {
                seed,
                input,
                trace,
                timeout: Duration::from_millis(timeout_ms),
                max_steps,
            };
            match engine {
                Engine::Ref => run_ref(&p, &opts),
                Engine::Concurrent => run_concurrent(&p, &opts),
            }
        }),
        Command::Explore {
            target,
            max_depth,
            budget,
            threads,
            iterations,
            input,
        } => load(&target, threads, iterations).and_then(|p| {
            let cfg = ExploreConfig {
                max_depth,
                budget,
                input,
                ..ExploreConfig::default()
            };
            run_explore(&p, &cfg)
        }),
        Command::CheckOpacity {
            trace,
            max_brute_force,
        } => check(&trace, max_brute_force),
        Command::Scenarios => {
            for s in scenarios::all() {
                println!(
                    "{:<22} {} (default {} threads x {} iterations)",
                    s.name, s.summary, s.desk.threads, s.desk.iterations
                );
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("otm: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

/// Resolves a scenario name or reads and parses a program file.
fn load(
    target: &str,
    threads: Option<usize>,
    iterations: Option<usize>,
) -> Result<SourceProgram, Failure> {
    if let Some(s) = scenarios::find(target) {
        let params = Params {
            threads: threads.unwrap_or(s.desk.threads),
            iterations: iterations.unwrap_or(s.desk.iterations),
        };
        return s
            .program(&params)
            .map_err(|e| fail(EXIT_PARSE, format!("{target}: {e}")));
    }
    let bytes = std::fs::read(target).map_err(|e| {
        fail(
            EXIT_ERROR,
            format!("{target}: not a scenario name and not readable: {e}"),
        )
    })?;
    syntax::parse_bytes(&bytes).map_err(|e| fail(EXIT_PARSE, format!("{target}:{e}")))
}

struct RunOpts {
    seed: u64,
    input: String,
    trace: Option<PathBuf>,
    timeout: Duration,
    max_steps: usize,
}

fn write_trace(path: &Path, h: &History) -> Result<(), Failure> {
    std::fs::write(path, h.to_jsonl())
        .map_err(|e| fail(EXIT_ERROR, format!("{}: {e}", path.display())))
}

fn run_ref(p: &SourceProgram, opts: &RunOpts) -> Result<(), Failure> {
    let mut m = Machine::from_program(p).with_input(&opts.input);
    let res = m
        .run(Policy::SeededRandom(opts.seed), opts.max_steps)
        .map_err(|e| fail(EXIT_ERROR, e.to_string()))?;
    if let Some(path) = &opts.trace {
        write_trace(path, &m.history())?;
    }
    println!("{}", m.summary(false));
    println!("steps: {}", res.steps);
    match res.outcome {
        RunOutcome::Terminated => Ok(()),
        RunOutcome::Deadlock => Err(fail(EXIT_DEADLOCK, "deadlock: no thread can move")),
        RunOutcome::StepLimit => Err(fail(
            EXIT_ERROR,
            format!("stopped after {} steps", opts.max_steps),
        )),
    }
}

fn run_concurrent(p: &SourceProgram, opts: &RunOpts) -> Result<(), Failure> {
    let rt = Runtime::new(RuntimeConfig {
        timeout: opts.timeout,
        input: opts.input.clone(),
        record: opts.trace.is_some(),
    });
    let report = rt.run_program(p);
    if let Some(path) = &opts.trace {
        write_trace(path, &report.history)?;
    }
    println!("{}", report.summary());
    println!("commits: {}", report.commits);
    if report.deadlock {
        return Err(fail(
            EXIT_DEADLOCK,
            format!("deadlock: no progress for {:?}", opts.timeout),
        ));
    }
    Ok(())
}

fn run_explore(p: &SourceProgram, cfg: &ExploreConfig) -> Result<(), Failure> {
    let res = match explore(p, cfg) {
        Ok(res) => res,
        Err(MachineError::BudgetExceeded(n)) => {
            return Err(fail(
                EXIT_ERROR,
                format!("more than {n} states; raise --budget"),
            ))
        }
        Err(e) => return Err(fail(EXIT_ERROR, e.to_string())),
    };
    for s in &res.terminals {
        let flag = if s.deadlock { "StuckDeadlock" } else { "ok" };
        println!("[{flag}] {s}");
    }
    println!(
        "{} terminal states, {} deadlocked, {} states visited, {} paths cut at depth {}",
        res.terminals.len(),
        res.terminals.iter().filter(|s| s.deadlock).count(),
        res.states,
        res.truncated,
        cfg.max_depth
    );
    Ok(())
}

fn check(path: &Path, max_brute_force: usize) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(EXIT_ERROR, format!("{}: {e}", path.display())))?;
    let h = History::from_jsonl(&text)
        .map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    let verdict = check_opaque_with(&h, max_brute_force)
        .map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    match verdict {
        Verdict::Opaque { witness } => {
            let order: Vec<String> = witness.iter().map(|k| k.to_string()).collect();
            println!("opaque; witness order {}", order.join(" < "));
            Ok(())
        }
        Verdict::NotOpaque { failure, graph } => {
            println!("not opaque: {failure}");
            println!("natural-order graph:\n{graph}");
            Err(fail(EXIT_NOT_OPAQUE, ""))
        }
        Verdict::Unknown { failure, graph } => {
            println!(
                "unknown: natural order fails ({failure}) and there are more than {max_brute_force} transactions to search"
            );
            println!("natural-order graph:\n{graph}");
            Ok(())
        }
    }
}
