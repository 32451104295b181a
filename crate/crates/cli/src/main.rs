//! `sgmh`: admission checks, analytic tables and simulation runs for
//! stop-and-go multihop scenarios.
//!
//! Exit codes: 0 success, 1 error, 2 a run saw bound violations, frame
//! overruns or buffer overflows, 3 `admit` rejected a connection.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use sgmh_core::metrics::{self, Format};
use sgmh_core::report;
use sgmh_core::sim::{self, RunOutput};
use sgmh_core::{verify_bounds, Scenario};

const EXIT_ERROR: u8 = 1;
const EXIT_VIOLATIONS: u8 = 2;
const EXIT_REJECTED: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "sgmh",
    version,
    about = "Stop-and-go multihop scheduling simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check admission, simulate, and report metrics.
    Run {
        scenario: PathBuf,
        /// Seed for random phases and offsets; defaults to the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for output files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Write per-hop packet records to packets.csv.
        #[arg(long)]
        csv: bool,
        /// Write the text summary to summary.txt.
        #[arg(long)]
        summary: bool,
        /// Simulate every connection, admitted or not.
        #[arg(long = "bypass_admission", alias = "bypass-admission")]
        bypass_admission: bool,
        /// Run this many consecutive seeds in parallel, one output directory each.
        #[arg(long)]
        sweep: Option<u64>,
    },
    /// Print rate, aggregate and frame-constraint verdicts per link.
    Admit { scenario: PathBuf },
    /// Print the analytic queuing-delay envelope per class.
    Bounds {
        scenario: PathBuf,
        #[arg(long, default_value_t = 5)]
        hops: u32,
    },
    /// Print buffer budgets per link and class.
    Buffers { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run {
            scenario,
            seed,
            out,
            csv,
            summary,
            bypass_admission,
            sweep,
        } => {
            let mut sc = Scenario::load(&scenario)?;
            sc.options.bypass_admission |= bypass_admission;
            let seed = seed.unwrap_or(sc.seed);
            match sweep {
                None => run_one(&sc, seed, &out, csv, summary, true),
                Some(n) => run_sweep(&sc, seed, n, &out, csv, summary),
            }
        }
        Command::Admit { scenario } => {
            let sc = Scenario::load(&scenario)?;
            let outcome = sc.admission()?;
            print!("{}", report::admission_table(&outcome));
            Ok(if outcome.all_admitted() {
                0
            } else {
                EXIT_REJECTED
            })
        }
        Command::Bounds { scenario, hops } => {
            let sc = Scenario::load(&scenario)?;
            print!("{}", report::bounds_table(&sc.classes, hops));
            Ok(0)
        }
        Command::Buffers { scenario } => {
            let sc = Scenario::load(&scenario)?;
            let outcome = sc.admission()?;
            let active = sc.active_connections(&outcome);
            let budgets = sc.budgets(&sc.class_loads(&active));
            print!("{}", report::buffers_table(&sc, &budgets));
            Ok(0)
        }
    }
}

fn run_one(
    sc: &Scenario,
    seed: u64,
    out: &Path,
    csv: bool,
    summary: bool,
    print: bool,
) -> Result<u8> {
    let RunOutput {
        metrics, budgets, ..
    } = sim::run(sc, seed, false)?;
    if csv || summary {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    if csv {
        metrics::emit(
            &metrics,
            &sc.classes,
            Some(&budgets),
            Format::Csv,
            &out.join("packets.csv"),
        )?;
    }
    if summary {
        metrics::emit(
            &metrics,
            &sc.classes,
            Some(&budgets),
            Format::Summary,
            &out.join("summary.txt"),
        )?;
    }
    if print {
        println!("seed {seed}");
        print!(
            "{}",
            metrics::summary(&metrics, &sc.classes, Some(&budgets))
        );
    }
    let report = verify_bounds(&metrics, &sc.classes);
    let dirty = !report.is_clean() || report.overflow_drops > 0;
    Ok(if dirty { EXIT_VIOLATIONS } else { 0 })
}

fn run_sweep(
    sc: &Scenario,
    first: u64,
    count: u64,
    out: &Path,
    csv: bool,
    summary: bool,
) -> Result<u8> {
    let results: Vec<(u64, Result<u8>)> = (first..first + count)
        .into_par_iter()
        .map(|seed| {
            let dir = out.join(format!("seed-{seed}"));
            (seed, run_one(sc, seed, &dir, csv, summary, false))
        })
        .collect();
    let mut worst = 0;
    for (seed, r) in results {
        let code = r.with_context(|| format!("seed {seed}"))?;
        println!(
            "seed {seed} {}",
            if code == 0 { "clean" } else { "violations" }
        );
        worst = worst.max(code);
    }
    Ok(worst)
}
