use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use sparse_ticket::data::{render_digits, write_idx, Split};
use sparse_ticket::experiment::{
    aggregate, emit_report, load_results, parse_config, run_matrix, Profile, RunOptions,
};
use sparse_ticket::mask::{audit_sparsity, Mask};
use sparse_ticket::rng::derive_seed;
use sparse_ticket::Error;

#[derive(Parser)]
#[command(name = "sparse-ticket", version, about = "Sparse subnetwork training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, ratio, seed) cell of a config and write the report.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Budget profile: desk or paper (overrides the config).
        #[arg(long, value_parser = parse_profile)]
        profile: Option<Profile>,
        /// Reuse completed cells from a previous run of the same config.
        #[arg(long)]
        resume: bool,
    },
    /// Re-emit report files from the cells persisted in a results directory.
    Report { dir: PathBuf },
    /// Print the per-layer sparsity of a mask file as CSV.
    Audit { mask: PathBuf },
    /// Write rendered digit images as IDX train/test files.
    Digits {
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        test: usize,
        #[arg(long, default_value_t = 16)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const EXIT_CELL_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::Config(_) | Error::Parse { .. } | Error::Validation(_))
        )
    })
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            profile,
            resume,
        } => {
            let mut cfg = match parse_config(&config, profile) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: loading {}: {e}", config.display());
                    return Ok(EXIT_CONFIG);
                }
            };
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let outcome = run_matrix(&cfg, RunOptions { resume })?;
            if outcome.resumed > 0 {
                println!("resumed {} completed cells", outcome.resumed);
            }
            if !outcome.results.is_empty() {
                emit_report(&outcome.results, &cfg.out_dir)?;
                for row in aggregate(&outcome.results) {
                    println!(
                        "{:<9} {:>5.1}%  {}  (n={})",
                        row.strategy.label(),
                        row.ratio * 100.0,
                        row.formatted(),
                        row.runs
                    );
                }
            }
            for (key, err) in &outcome.failures {
                eprintln!("cell {} failed: {err}", key.stem());
            }
            println!("results in {}", cfg.out_dir.display());
            Ok(if outcome.failures.is_empty() { 0 } else { EXIT_CELL_FAILURE })
        }
        Command::Report { dir } => {
            let results = load_results(&dir)?;
            for p in emit_report(&results, &dir)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Audit { mask } => {
            let m = Mask::load(&mask).with_context(|| format!("reading {}", mask.display()))?;
            print!("{}", audit_sparsity(&m).render());
            Ok(0)
        }
        Command::Digits {
            out,
            train,
            test,
            side,
            seed,
        } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let tr = render_digits(train, side, seed, Split::Train)?;
            let te = render_digits(test, side, derive_seed(seed, &[1]), Split::Test)?;
            write_idx(&tr, &out.join("train-images-idx3-ubyte"), &out.join("train-labels-idx1-ubyte"))?;
            write_idx(&te, &out.join("test-images-idx3-ubyte"), &out.join("test-labels-idx1-ubyte"))?;
            println!("wrote {train} train and {test} test images to {}", out.display());
            Ok(0)
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(if is_config_error(&e) { EXIT_CONFIG } else { EXIT_CELL_FAILURE })
        }
    }
}
