//! Command-line interface.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands;
use crate::config::{preset, ExperimentConfig};
use crate::error::{AppError, AppResult};
use crate::pipeline::Evaluation;
use crate::reproduce::{self, Study};

#[derive(Debug, Parser)]
#[command(name = "advnf", version, about = "Adversarially trained conditional normalizing flows")]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: mog4, mog8, rings4, xy8, xy16, exy8, exy16, desk, desk-small.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate training, validation and test ensembles.
    GenData,
    /// Train a flow; writes checkpoint.txt and trace.csv.
    Train,
    /// Score a checkpoint; writes report.csv.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw samples at one condition; writes samples.csv.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index into the condition grid.
        #[arg(long, default_value_t = 0)]
        condition: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// De-bias with independent Metropolis-Hastings and report the acceptance rate.
        #[arg(long)]
        imh: bool,
    },
    /// Run a whole study: table1, table2-desk, table6-desk, fig3-data or fig4-data.
    Reproduce { study: String },
    /// Print the resolved configuration.
    ShowConfig,
}

fn resolve(cli: &Cli) -> AppResult<ExperimentConfig> {
    let seed = cli.seed.unwrap_or(0);
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name, seed)?,
        (None, None) => {
            return Err(AppError::Validation(
                "pass --config <path> or --preset <name>".into(),
            ))
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> AppResult<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(AppError::Validation("--jobs must be positive".into()));
        }
        // a second initialisation only fails when a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let out = cli.out.clone();
    match &cli.command {
        Command::Reproduce { study } => {
            let study: Study = study.parse()?;
            reproduce::run(study, cli.seed.unwrap_or(0), &out)?;
            println!("wrote {}", out.display());
        }
        Command::ShowConfig => print!("{}", resolve(&cli)?.to_toml()),
        Command::GenData => {
            let d = commands::gen_data(&resolve(&cli)?, &out)?;
            println!("generated {} conditions in {}", d.num_conditions(), commands::data_dir(&out).display());
        }
        Command::Train => {
            let t = commands::train(&resolve(&cli)?, &out)?;
            println!(
                "phase 1: {} epochs (best {}); phase 2: {} iterations; checkpoint {}",
                t.phase1.epochs,
                t.phase1.best_epoch,
                t.phase2.trace.len(),
                commands::checkpoint_path(&out).display()
            );
        }
        Command::Evaluate { checkpoint } => {
            let ev = commands::evaluate(&resolve(&cli)?, &out, checkpoint.as_deref())?;
            match ev {
                Evaluation::Lattice(e) => println!(
                    "NLL {:.3}  AR {:.2}  %OL(E) {:.2}  EMD(E)x1000 {:.3}  %OL(M) {:.2}  EMD(M)x1000 {:.3}",
                    e.report.mean.nll,
                    e.report.mean.acceptance_rate,
                    e.report.mean.ol_energy,
                    1000.0 * e.report.mean.emd_energy,
                    e.report.mean.ol_mag,
                    1000.0 * e.report.mean.emd_mag
                ),
                Evaluation::Synthetic(e) => println!(
                    "NLL {:.3}  AR {:.2}  occupancy {:?}",
                    e.mean_nll, e.mean_acceptance_rate, e.pooled_occupancy
                ),
            }
            println!("report {}", out.join("report.csv").display());
        }
        Command::Sample {
            checkpoint,
            condition,
            n,
            imh,
        } => {
            let ar = commands::sample(&resolve(&cli)?, &out, checkpoint.as_deref(), *condition, *n, *imh)?;
            if let Some(ar) = ar {
                println!("IMH acceptance rate {ar:.2}%");
            }
            println!("samples {}", out.join("samples.csv").display());
        }
    }
    Ok(())
}
