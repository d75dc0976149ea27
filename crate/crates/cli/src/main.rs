use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use eivuq::models::InferenceMode;
use eivuq::{Error, Result};
use eivuq_cli::config::{Baseline, ExperimentConfig};
use eivuq_cli::report::{render_table, RunReport};
use eivuq_cli::runner::run_experiment;
use eivuq_cli::{operator, selftest};

#[derive(Parser)]
#[command(name = "eivuq", version, about = "Errors-in-variables uncertainty quantification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the operator corpus, train the operator and save its checkpoint.
    TrainOperator {
        config: PathBuf,
        /// Checkpoint path (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment and write its report and artifacts.
    Run {
        config: PathBuf,
        /// Seeds to run (overrides the config).
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Inference modes: ignore, model, recast.
        #[arg(long, value_delimiter = ',')]
        mode: Vec<InferenceMode>,
        /// Baselines, e.g. map, dropout:0.02, non-synergistic, misspecified:0.01.
        #[arg(long, value_delimiter = ',')]
        baselines: Vec<Baseline>,
        /// Suppress progress messages.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Print the tables of finished runs.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Quick numerical checks of the core library.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let t0 = Instant::now();
    match execute(cli.command) {
        Ok(()) => {
            eprintln!("done in {:.1} s", t0.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainOperator { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !cfg.experiment.is_operator() {
                return Err(Error::Config(format!("{} does not use a pretrained operator", cfg.experiment)));
            }
            if let Some(out) = out {
                cfg.operator.as_mut().expect("resolved operator section").checkpoint = out;
            }
            let model = operator::train_and_save(&cfg, &|m| eprintln!("[{}] {m}", cfg.experiment))?;
            println!(
                "saved {} (test relative L2 {:.4})",
                cfg.operator().checkpoint.display(),
                model.meta.test_rel_l2.unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Run {
            config,
            seed,
            out,
            mode,
            baselines,
            quiet,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !seed.is_empty() {
                cfg.seeds = seed;
            }
            if !mode.is_empty() {
                cfg.modes = mode;
            }
            if !baselines.is_empty() {
                cfg.baselines = baselines;
            }
            cfg.resolve()?;
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.name()));
            let outcome = run_experiment(&cfg, &out, quiet)?;
            print!("{}", render_table(&outcome.report));
            println!("artifacts: {}", outcome.out_dir.display());
            Ok(())
        }
        Command::Report { dirs } => {
            for (i, d) in dirs.iter().enumerate() {
                if i > 0 {
                    println!();
                }
                print!("{}", render_table(&RunReport::load(d)?));
            }
            Ok(())
        }
        Command::Selftest => {
            let checks = selftest::run_selftest()?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if failed > 0 {
                return Err(Error::InvalidInput(format!("{failed} self-test check(s) failed")));
            }
            Ok(())
        }
    }
}
