use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ipde_core::experiments::{self, ExperimentConfig, RunOptions, Tag};
use ipde_core::par;

/// Obstacle IPDE experiments: regression Monte Carlo and a grid oracle.
#[derive(Debug, Parser)]
#[command(name = "ipde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Probe the coefficient assumptions of a catalog problem.
    ValidateProblem(Common),
    /// Simulate the forward jump-diffusion.
    Simulate(Common),
    /// Solve on the finite-difference grid.
    SolvePide(Common),
    /// Solve the reflected BSDE by regression Monte Carlo.
    SolveRbsde(Common),
    /// Run both solvers and compare.
    Compare(Common),
    /// Refine the jump truncation along a ladder.
    ConvergeTruncation(Common),
    /// Lipschitz, jump-moment and nonlocal-term regularity checks.
    Regularity(Common),
    /// Forward moment estimates over an `(s − t, x)` ladder.
    Moments(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; never changes results.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: config `out`, else `results`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-path tables.
    #[arg(long)]
    dump_paths: bool,
}

impl Command {
    fn split(self) -> (Tag, Common) {
        match self {
            Command::ValidateProblem(c) => (Tag::ValidateProblem, c),
            Command::Simulate(c) => (Tag::Simulate, c),
            Command::SolvePide(c) => (Tag::SolvePide, c),
            Command::SolveRbsde(c) => (Tag::SolveRbsde, c),
            Command::Compare(c) => (Tag::Compare, c),
            Command::ConvergeTruncation(c) => (Tag::ConvergeTruncation, c),
            Command::Regularity(c) => (Tag::Regularity, c),
            Command::Moments(c) => (Tag::Moments, c),
        }
    }
}

fn execute(tag: Tag, args: Common) -> ipde_core::Result<bool> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != tag {
        return Err(ipde_core::Error::Config(format!(
            "config is for `{}` but the subcommand is `{}`",
            cfg.experiment.stem().replace('_', "-"),
            tag.stem().replace('_', "-")
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.threads.or(cfg.threads) {
        par::init_threads(n)?;
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    experiments::check_writable(&out)?;
    experiments::validate(&cfg)?;

    let start = Instant::now();
    let outcome = experiments::run(
        &cfg,
        RunOptions {
            dump_paths: args.dump_paths,
        },
    )?;
    let files = experiments::emit(&outcome, &out, Some(start.elapsed().as_secs_f64()))?;
    for m in &outcome.record.metrics {
        let c = m.component.map(|c| format!("[{c}]")).unwrap_or_default();
        eprintln!(
            "{} {}{} = {:.6e} (tolerance {:.3e})",
            if m.pass { "ok  " } else { "FAIL" },
            m.name,
            c,
            m.value,
            m.tolerance
        );
    }
    for f in files {
        println!("{}", f.display());
    }
    Ok(outcome.record.pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (tag, args) = cli.command.split();
    match execute(tag, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
