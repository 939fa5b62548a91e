use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use esdfm_cli::config::{DataSource, ExperimentConfig};
use esdfm_cli::{cmd_gen_data, cmd_pretrain, cmd_robustness, cmd_run, cmd_sweep_elapsed};
use esdfm_core::methods::MethodName;
use esdfm_core::Result;

#[derive(Parser)]
#[command(name = "esdfm", version, about = "Streaming experiments for delayed-feedback CVR prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides; flags win over the file.
#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Criteo-format log to use instead of the configured data source.
    #[arg(long)]
    criteo: Option<PathBuf>,
    /// Elapsed time c, seconds.
    #[arg(long)]
    elapsed: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodName>>,
    #[arg(long)]
    bucket_width: Option<f64>,
    #[arg(long)]
    disturbance: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::new(
                DataSource::Synthetic {
                    generator: Default::default(),
                    truth: Default::default(),
                },
                vec![MethodName::Vanilla, MethodName::Oracle, MethodName::EsDfm],
            ),
        };
        if let Some(path) = self.criteo {
            c.data = DataSource::Criteo { path };
        }
        if let Some(v) = self.elapsed {
            c.elapsed = v;
        }
        if let Some(v) = self.methods {
            c.methods = v;
        }
        if let Some(v) = self.bucket_width {
            c.bucket_width = v;
        }
        if let Some(v) = self.disturbance {
            c.disturbance = v;
        }
        if let Some(v) = self.seeds {
            c.seeds = v;
        }
        if let Some(v) = self.output_dir {
            c.output_dir = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Stream every configured method and write reports plus a comparison table.
    Run(Common),
    /// ES-DFM at several elapsed times.
    SweepElapsed {
        #[command(flatten)]
        common: Common,
        /// Elapsed times in seconds, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        c_values: Vec<f64>,
    },
    /// Configured methods at several disturbance strengths.
    Robustness {
        #[command(flatten)]
        common: Common,
        /// Disturbance strengths in [0, 1], comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        d_values: Vec<f64>,
    },
    /// Write the click stream of each seed.
    GenData(Common),
    /// Pre-train the CVR model and estimators and save checkpoints.
    Pretrain(Common),
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(common) => {
            let rows = cmd_run(&common.resolve()?)?;
            for r in rows {
                println!("seed {} {:<10} auc {:.4} pr_auc {:.4} nll {:.5}", r.seed, r.method, r.auc, r.pr_auc, r.nll);
            }
        }
        Command::SweepElapsed { common, c_values } => {
            for r in cmd_sweep_elapsed(&common.resolve()?, &c_values)? {
                println!("c {:>8} seed {} nll {:.5} observable {:.3}", r.c, r.seed, r.nll, r.observable_fraction);
            }
        }
        Command::Robustness { common, d_values } => {
            for r in cmd_robustness(&common.resolve()?, &d_values)? {
                println!("d {:.2} seed {} {:<10} nll {:.5}", r.d, r.seed, r.method, r.nll);
            }
        }
        Command::GenData(common) => cmd_gen_data(&common.resolve()?)?,
        Command::Pretrain(common) => cmd_pretrain(&common.resolve()?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
