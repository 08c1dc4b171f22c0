use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smallnoise::catalog;
use smallnoise_cli::config::read_config;
use smallnoise_cli::output::{output_root, write_run, OUT_ENV};
use smallnoise_cli::{exit, exit_code, run_study, Overrides, Study};

/// Small-noise SDE studies driven by a JSON problem config.
///
/// Reports go to <out>/<study>-<hash>/, where <out> is --out, the config's
/// "out" key, $SMALLNOISE_OUT or ./runs, in that order. Exit codes: 0 all
/// checks passed, 2 configuration error, 3 runtime error, 4 a check failed.
#[derive(Parser)]
#[command(name = "smallnoise", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ensemble moments per eps, with the moment bound where constants are known.
    Simulate(RunArgs),
    /// Sampled condition checks on the coefficients.
    Validate(RunArgs),
    /// Mean-square and sup-deviation convergence to the deterministic limit.
    Converge(RunArgs),
    /// Monte Carlo Feynman-Kac estimates against the characteristic limit.
    FeynmanKac(RunArgs),
    /// Transport special case (c = g = 0) of feynman-kac.
    Transport(RunArgs),
    /// Benchmark problems.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Subcommand)]
enum CatalogAction {
    List,
}

#[derive(Args)]
struct RunArgs {
    /// JSON problem config.
    config: PathBuf,
    /// Overrides "seed".
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides "eps_grid", e.g. --eps 0.4,0.2,0.1.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Overrides "M".
    #[arg(long)]
    paths: Option<usize>,
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(exit::RUNTIME as u8);
        }
    }
    let (study, args) = match cli.command {
        Command::Catalog { action: CatalogAction::List } => {
            for name in catalog::NAMES {
                let e = catalog::entry(name, 1.0).expect("catalog names resolve");
                println!("{:<16}{:<13}{}", e.name, format!("{:?}", e.class).to_lowercase(), e.description);
            }
            return ExitCode::SUCCESS;
        }
        Command::Simulate(a) => (Study::Simulate, a),
        Command::Validate(a) => (Study::Validate, a),
        Command::Converge(a) => (Study::Converge, a),
        Command::FeynmanKac(a) => (Study::FeynmanKac, a),
        Command::Transport(a) => (Study::Transport, a),
    };
    ExitCode::from(run(study, args, cli.threads) as u8)
}

fn run(study: Study, args: RunArgs, threads: Option<usize>) -> i32 {
    let overrides = Overrides { seed: args.seed, eps: args.eps, paths: args.paths, out: args.out.clone() };
    let resolved = read_config(&args.config).and_then(|mut c| {
        c.apply(&overrides);
        c.resolve()
    });
    let resolved = match resolved {
        Ok(r) => r,
        Err(errors) => {
            for e in &errors.0 {
                eprintln!("config error at {e}");
            }
            return exit::CONFIG;
        }
    };
    let outcome = match run_study(study, &resolved) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let root = output_root(args.out.as_deref(), resolved.out.as_deref());
    let threads = threads.unwrap_or_else(rayon::current_num_threads);
    let dir = match write_run(&root, study, &resolved.config, &outcome, threads) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: cannot write reports under {} ({OUT_ENV}): {e}", root.display());
            return exit::RUNTIME;
        }
    };
    for c in &outcome.summary.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &outcome.summary.notes {
        println!("note: {n}");
    }
    println!("reports: {}", dir.display());
    if outcome.summary.passed {
        exit::OK
    } else {
        exit::CHECK_FAILED
    }
}
