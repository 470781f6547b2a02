//! `bosim`: run scenarios, check determinism and time the simulator.
//!
//! Exit status: 0 on success, 2 on load or I/O errors, 3 on runtime errors,
//! 4 when replays diverge.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use behavior_objects::dsl::load_file;
use behavior_objects::harness::{self, Profile};
use behavior_objects::world::{Keep, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bosim", version, about = "Headless behavior objects simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and optionally write its trace and statistics.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario tick count.
        #[arg(long)]
        ticks: Option<u64>,
        /// Trace output file; ends with a hash footer.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Statistics output file (JSON).
        #[arg(long, value_name = "PATH")]
        stats: Option<PathBuf>,
    },
    /// Run a scenario several times and compare trace hashes.
    ReplayCheck {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ticks: Option<u64>,
        /// Number of runs.
        #[arg(long, default_value_t = 3)]
        runs: usize,
        /// Perturbs the last run at this tick (harness self-test).
        #[arg(long, hide = true)]
        chaos_tick: Option<u64>,
    },
    /// Time a generated scenario with tracing off.
    Bench {
        #[arg(long, default_value_t = 300)]
        npcs: usize,
        /// simple or complex
        #[arg(long, default_value = "simple", value_parser = parse_profile)]
        profile: Profile,
        #[arg(long, default_value_t = 1000)]
        ticks: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    Profile::parse(s).ok_or_else(|| format!("unknown profile `{s}` (expected simple or complex)"))
}

enum Failure {
    Load(anyhow::Error),
    Runtime(String),
    Diverged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { scenario, seed, ticks, trace, stats } => run(&scenario, seed, ticks, trace.as_deref(), stats.as_deref()),
        Cmd::ReplayCheck { scenario, seed, ticks, runs, chaos_tick } => replay(&scenario, seed, ticks, runs, chaos_tick),
        Cmd::Bench { npcs, profile, ticks, seed } => bench(npcs, profile, ticks, seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Load(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Diverged) => ExitCode::from(4),
    }
}

fn overrides(seed: Option<u64>, ticks: Option<u64>) -> impl Fn(&mut RunConfig) {
    move |c| {
        if let Some(s) = seed {
            c.seed = s;
        }
        if let Some(t) = ticks {
            c.ticks = t;
        }
    }
}

fn run(path: &Path, seed: Option<u64>, ticks: Option<u64>, trace: Option<&Path>, stats: Option<&Path>) -> Result<(), Failure> {
    let loaded = load_file(path, &overrides(seed, ticks)).map_err(|e| Failure::Load(e.into()))?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let mut world = loaded.world;
    let mut out = match trace {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display())).map_err(Failure::Load)?;
            Some(BufWriter::new(f))
        }
        None => {
            world.trace.keep = Keep::None;
            None
        }
    };
    let io = |e: std::io::Error| Failure::Load(anyhow::Error::new(e).context("writing trace"));
    let mut error = None;
    for _ in 0..world.config.ticks {
        let r = world.step();
        if let Some(o) = out.as_mut() {
            for line in world.trace.take_lines() {
                writeln!(o, "{line}").map_err(io)?;
            }
        }
        if let Err(e) = r {
            error = Some(e);
            break;
        }
    }
    if let Some(mut o) = out {
        writeln!(o, "{}", world.trace.footer()).map_err(io)?;
        o.flush().map_err(io)?;
    }
    if let Some(p) = stats {
        let json = serde_json::to_string_pretty(&world.stats).expect("stats serialize");
        std::fs::write(p, json + "\n").with_context(|| format!("cannot write {}", p.display())).map_err(Failure::Load)?;
    }
    println!("scenario: {}", path.display());
    println!("seed: {}  ticks: {}", world.config.seed, world.stats.ticks);
    println!("trace: {:016x} ({} lines)", world.trace.hash(), world.trace.count());
    println!(
        "grants: {}  node evals: {}  max evals/update: {}  diagnostics: {}",
        world.stats.grants,
        world.stats.node_evals,
        world.stats.max_update_evals,
        world.diagnostics.len()
    );
    match error {
        Some(e) => Err(Failure::Runtime(e.to_string())),
        None => Ok(()),
    }
}

fn replay(path: &Path, seed: Option<u64>, ticks: Option<u64>, runs: usize, chaos: Option<u64>) -> Result<(), Failure> {
    let src = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(Failure::Load)?;
    let r = harness::replay_check(&src, &overrides(seed, ticks), runs, chaos).map_err(|e| Failure::Load(e.into()))?;
    for (i, h) in r.hashes.iter().enumerate() {
        println!("run {}: {h:016x}", i + 1);
    }
    match r.divergence {
        None => {
            println!("all {} runs identical", r.hashes.len());
            Ok(())
        }
        Some(d) => {
            eprintln!("run {} diverged at tick {}", d.run + 1, d.tick);
            Err(Failure::Diverged)
        }
    }
}

fn bench(npcs: usize, profile: Profile, ticks: u64, seed: u64) -> Result<(), Failure> {
    let t = harness::bench(npcs, profile, ticks, seed).map_err(|e| Failure::Load(e.into()))?;
    println!("npcs: {}  profile: {:?}  ticks: {}", t.npcs, profile, t.ticks);
    println!("mean: {:.3} ms/tick  p99: {:.3} ms  max: {:.3} ms", t.mean_ms, t.p99_ms, t.max_ms);
    println!("node evals: {}", t.node_evals);
    Ok(())
}
