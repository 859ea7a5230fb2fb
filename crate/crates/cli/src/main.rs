use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use degpar::config::{describe, SuiteConfig};
use degpar::suite::{run_suite, Mode, RunOptions};

#[derive(Parser)]
#[command(name = "degpar", version, about = "Boundary classification, monotone solvers and maximum-principle checks for degenerate parabolic operators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every check in a suite config; exit status 1 if any verdict fails.
    Run(Common),
    /// Print the coefficients of a builtin operator.
    Describe { name: String },
    /// Boundary partition and Fichera report only.
    Classify(Common),
    /// Solve without maximum-principle checks.
    Solve(Common),
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override run seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Runs executed in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// Fail on ambiguous boundary classification.
    #[arg(long)]
    strict: bool,
}

fn execute(c: Common, mode: Mode) -> Result<ExitCode, degpar::Error> {
    let cfg = SuiteConfig::load(&c.config)?;
    let opts = RunOptions {
        out: c.out,
        seed: c.seed,
        jobs: c.jobs,
        strict: c.strict,
        mode,
    };
    let start = std::time::Instant::now();
    let outcome = run_suite(&cfg, &opts)?;
    print!("{}", outcome.summary());
    println!(
        "suite {}: {} in {:.2}s, artifacts in {}",
        cfg.name,
        if outcome.all_pass() { "all verdicts pass" } else { "FAILURES" },
        start.elapsed().as_secs_f64(),
        opts.out.display()
    );
    Ok(ExitCode::from(outcome.exit_code() as u8))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(c) => execute(c, Mode::Full),
        Cmd::Classify(c) => execute(c, Mode::ClassifyOnly),
        Cmd::Solve(c) => execute(c, Mode::SolveOnly),
        Cmd::Describe { name } => describe(&name).map(|t| {
            print!("{t}");
            ExitCode::SUCCESS
        }),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
