//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 2 config error, 3 training divergence, 4 scenario
//! violation, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use boxfree::harness::{
    cmd_attack, cmd_false_positive_suite, cmd_report, cmd_sweep, cmd_train_victim,
    ExperimentConfig,
};
use boxfree::removal::verify_s1_analytic;
use boxfree::Result;

#[derive(Parser)]
#[command(name = "boxfree", version, about = "Box-free watermarking attack testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the victim stack (image-processing, hiding, extraction nets).
    TrainVictim {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the configured attack against a trained victim.
    Attack {
        #[arg(long)]
        config: PathBuf,
        /// Path to the victim's run manifest.
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Robustness sweep (jpeg / noise / lattice) against a trained victim.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Merge manifests into a table, summary, and qualitative image grids.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Run manifests to merge.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
    /// False-positive suite: clean images through extraction and removers.
    FpSuite {
        #[arg(long)]
        victim: PathBuf,
        /// Remover run manifests to include.
        #[arg(long = "remover")]
        removers: Vec<PathBuf>,
    },
    /// Check the closed-form ReLU-chain gradient against reverse-mode.
    VerifyS1 {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn print_rows(manifest: &boxfree::harness::RunManifest) {
    for note in &manifest.notes {
        println!("note: {note}");
    }
    for row in &manifest.rows {
        println!("{}", row.to_csv());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainVictim { config, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let manifest = cmd_train_victim(&cfg)?;
            print_rows(&manifest);
            println!(
                "manifest: {}",
                cfg.out_dir.join(cfg.config_hash()).join("manifest-train-victim.txt").display()
            );
        }
        Command::Attack { config, victim, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let manifest = cmd_attack(&cfg, &victim)?;
            print_rows(&manifest);
        }
        Command::Sweep { config, victim, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let manifest = cmd_sweep(&cfg, &victim)?;
            print_rows(&manifest);
        }
        Command::Report { out, manifests } => {
            let files = cmd_report(&manifests, &out)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::FpSuite { victim, removers } => {
            let manifest = cmd_false_positive_suite(&victim, &removers)?;
            print_rows(&manifest);
        }
        Command::VerifyS1 { trials, max_depth, seed } => {
            let report = verify_s1_analytic(max_depth, trials, seed)?;
            println!(
                "trials={} active={} inactive={} max_rel_err_active={:.3e} \
                 max_abs_err_inactive={:.3e}",
                report.trials,
                report.active_branches,
                report.inactive_branches,
                report.max_rel_err_active,
                report.max_abs_err_inactive
            );
            if !report.passed(1e-9) {
                return Err(boxfree::Error::InvalidParameter(
                    "analytic gradient disagrees with reverse-mode".into(),
                ));
            }
            println!("analytic gradient matches reverse-mode on all sampled chains");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
