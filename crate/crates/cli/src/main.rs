use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlmc_core::experiment::{
    output_root, report, run_experiment, ExperimentConfig, OUTPUT_ROOT_ENV,
};
use mlmc_core::verify::{run_suite, SUITES};
use mlmc_core::Error;

const EXIT_INVALID: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mlmc",
    version,
    about = "MLMC gradient compression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) in a TOML config and write CSVs plus summary.json.
    Run {
        config: PathBuf,
        /// Output root; overrides the environment variable.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named property suite and print measured vs expected values.
    Verify {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        suite: String,
    },
    /// Aggregate the CSVs in a directory into a bits-vs-gap table.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Verify { suite } => cmd_verify(&suite),
        Command::Report { dir } => cmd_report(&dir),
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_INVALID)
}

fn cmd_run(path: &Path, out: Option<PathBuf>) -> ExitCode {
    let config = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let root = out.unwrap_or_else(|| output_root(Path::new("results")));
    let summary = match run_experiment(&config, &root) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let dir = config.output_dir(&root);
    for r in &summary.runs {
        for w in &r.warnings {
            eprintln!("warning: {} seed {}: {w}", r.method, r.seed);
        }
        match (r.final_gap, r.diverged_at) {
            (_, Some(t)) => println!("{} seed {}: diverged at t={t}", r.method, r.seed),
            (Some(g), None) => println!(
                "{} seed {}: eta {:.4e}, final gap {g:.6e}, {} bits",
                r.method, r.seed, r.eta, r.total_bits
            ),
            (None, None) => println!("{} seed {}: no gap recorded", r.method, r.seed),
        }
    }
    println!(
        "wrote {} (set {OUTPUT_ROOT_ENV} to change the root)",
        dir.display()
    );
    if summary.diverged() {
        eprintln!("error: divergence guard tripped");
        return ExitCode::from(EXIT_DIVERGED);
    }
    ExitCode::SUCCESS
}

fn cmd_verify(suite: &str) -> ExitCode {
    let checks = match run_suite(suite) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{suite}: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        ExitCode::from(EXIT_CHECK_FAILED)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_report(dir: &Path) -> ExitCode {
    match report(dir) {
        Ok(table) => {
            print!("{table}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
