//! `kkl`: simulate, train, sweep, observe, and bound KKL observers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod svg;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "kkl",
    version,
    about = "KKL observers with Lipschitz-bounded inverse maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand; each flag mirrors a config path.
#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run config; missing fields take their defaults
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.gamma=30` (repeatable)
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    sets: Vec<String>,
    /// `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `data.sigma`
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// `data.m`
    #[arg(long, global = true)]
    m: Option<usize>,
    /// `train.gamma`
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// `train.epochs`
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// `output_dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant and write a paired (x, z) dataset
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the Lipschitz-bounded inverse map
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV (with its JSON sidecar); regenerated from the config when omitted
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Sweep the Lipschitz bound against training and evaluation noise
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also write SVG plots
        #[arg(long)]
        svg: bool,
    },
    /// Run a trained observer on a fresh noisy episode
    Observe {
        #[command(flatten)]
        common: Common,
        /// Trained model JSON
        #[arg(long)]
        model: PathBuf,
        /// `observe.sigma_eval`
        #[arg(long)]
        sigma_eval: Option<f64>,
        /// Also write SVG plots
        #[arg(long)]
        svg: bool,
    },
    /// Evaluate the generalization bound for a trained model
    Bound {
        #[command(flatten)]
        common: Common,
        /// Trained model JSON
        #[arg(long)]
        model: PathBuf,
        /// Dataset CSV the model was trained on; regenerated from the config when omitted
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// `analysis.alpha`
        #[arg(long)]
        alpha: Option<f64>,
        /// `analysis.epsilon`
        #[arg(long)]
        epsilon: Option<f64>,
        /// `analysis.l_s`
        #[arg(long)]
        l_s: Option<f64>,
        /// `analysis.l_t`
        #[arg(long)]
        l_t: Option<f64>,
    },
}

impl Common {
    fn overrides(
        &self,
        extra: &[(&str, Option<String>)],
    ) -> Result<Vec<(String, String)>, CliError> {
        let mut out = Vec::new();
        for s in &self.sets {
            let (path, value) = s.split_once('=').ok_or_else(|| {
                CliError::Config(format!("`--set {s}` must look like PATH=VALUE"))
            })?;
            out.push((path.trim().to_string(), value.trim().to_string()));
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("data.sigma", self.sigma.map(|v| v.to_string())),
            ("data.m", self.m.map(|v| v.to_string())),
            ("train.gamma", self.gamma.map(|v| v.to_string())),
            ("train.epochs", self.epochs.map(|v| v.to_string())),
            (
                "output_dir",
                self.out
                    .as_ref()
                    .map(|p| serde_json::Value::String(p.display().to_string()).to_string()),
            ),
        ];
        for (path, value) in flags.iter().chain(extra) {
            if let Some(v) = value {
                out.push((path.to_string(), v.clone()));
            }
        }
        Ok(out)
    }

    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides(extra)?)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let text = |v: Option<f64>| v.map(|x| x.to_string());
    match cli.command {
        Command::Simulate { common } => commands::simulate(&common.resolve(&[])?),
        Command::Train { common, dataset } => {
            commands::train_cmd(&common.resolve(&[])?, dataset.as_deref())
        }
        Command::Sweep { common, svg } => commands::sweep(&common.resolve(&[])?, svg),
        Command::Observe {
            common,
            model,
            sigma_eval,
            svg,
        } => {
            let cfg = common.resolve(&[("observe.sigma_eval", text(sigma_eval))])?;
            commands::observe(&cfg, &model, svg)
        }
        Command::Bound {
            common,
            model,
            dataset,
            alpha,
            epsilon,
            l_s,
            l_t,
        } => {
            let cfg = common.resolve(&[
                ("analysis.alpha", text(alpha)),
                ("analysis.epsilon", text(epsilon)),
                ("analysis.l_s", text(l_s)),
                ("analysis.l_t", text(l_t)),
            ])?;
            commands::bound(&cfg, &model, dataset.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
