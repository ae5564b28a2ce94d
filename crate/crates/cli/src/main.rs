//! `realign` — config-driven driver for the preference-alignment laboratory:
//! curate preference pairs, train the two alignment stages, and run the
//! evaluation harnesses, all into reproducible run directories.

mod commands;
mod config;
mod error;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::RunArgs;
use config::Preset;
use error::{CliError, CliResult};
use realign::training::Stage;

#[derive(Parser)]
#[command(name = "realign", version, about = "Two-stage preference alignment on toy diffusion models")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory. Defaults to runs/<command>-seed<seed> under the
    /// current directory, or under $REALIGN_OUT_DIR when set.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Hyperparameter preset the train command starts from.
    #[arg(long, global = true, value_enum, default_value = "toy")]
    preset: PresetArg,

    /// Emit data files only.
    #[arg(long, global = true)]
    no_plots: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum PresetArg {
    Toy,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Build a preference-pair dataset from the synthetic corpus.
    Curate,
    /// Train one alignment stage and write a checkpoint.
    Train {
        /// 1 = distribution alignment, 2 = pairwise preference optimization.
        #[arg(long)]
        stage: u8,
        /// Continue an interrupted run from its checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Let stage 2 start from the pretrained base instead of a stage-1
        /// checkpoint (reproduces the stage2-only ablation row).
        #[arg(long)]
        from_base: bool,
    },
    /// Score a checkpoint against the base model.
    Eval,
    /// Run the two-stage ablation grid (or the perturbation-mode grid).
    Ablate {
        /// Compare negative-construction modes instead of training stages.
        #[arg(long)]
        perturbation: bool,
    },
    /// Re-train stage 2 on nested subsets of the pair dataset.
    Sweep,
    /// Verify analytic loss gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Curate => "curate",
            Command::Train { .. } => "train",
            Command::Eval => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Sweep => "sweep",
            Command::Gradcheck { .. } => "gradcheck",
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

fn run(cli: Cli) -> CliResult<()> {
    let config_path = cli
        .config
        .ok_or_else(|| realign::Error::Config("--config is required".into()))?;
    let config = config::load_config(&config_path)?;
    let seed = cli.seed.unwrap_or(config.experiment.seed);
    let preset = match cli.preset {
        PresetArg::Toy => Preset::Toy,
        PresetArg::Paper => Preset::Paper,
    };
    let run_dir = resolve_run_dir(cli.out, &config, cli.command.name(), seed);
    std::fs::create_dir_all(&run_dir).map_err(realign::Error::from)?;

    let args = RunArgs {
        config_path,
        config,
        seed,
        run_dir,
        preset,
        no_plots: cli.no_plots,
    };

    match cli.command {
        Command::Curate => commands::cmd_curate(&args),
        Command::Train {
            stage,
            resume,
            from_base,
        } => {
            let stage = match stage {
                1 => Stage::Stage1,
                2 => Stage::Stage2,
                other => {
                    return Err(CliError::Core(realign::Error::Config(format!(
                        "--stage must be 1 or 2, got {other}"
                    ))))
                }
            };
            commands::cmd_train(&args, stage, resume.as_deref(), from_base)
        }
        Command::Eval => commands::cmd_eval(&args),
        Command::Ablate { perturbation } => commands::cmd_ablate(&args, perturbation),
        Command::Sweep => commands::cmd_sweep(&args),
        Command::Gradcheck { trials, tol } => commands::cmd_gradcheck(&args, trials, tol),
    }
}

fn resolve_run_dir(
    flag: Option<PathBuf>,
    config: &config::FileConfig,
    command: &str,
    seed: u64,
) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Some(dir) = &config.experiment.out {
        return dir.clone();
    }
    let root = std::env::var_os("REALIGN_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{command}-seed{seed}"))
}
