use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpa_grpo::cli::{cmd_eval, cmd_gen_data, cmd_report, cmd_sft, cmd_train, CliError};
use dpa_grpo::config::RunConfig;

/// Two-stage trainer (supervised cold start + group-relative policy
/// optimization) for synthetic multi-answer selection tasks.
#[derive(Parser)]
#[command(name = "dpa-grpo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set rl.reward_mode=binary
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        Ok(RunConfig::load(&self.config, &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/test/explore split files.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (must be fresh).
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised cold start on templated targets.
    Sft {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory holding the generated split files.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Epoch number the metrics stream continues from when resuming.
        #[arg(long, default_value_t = 0)]
        epoch_offset: usize,
    },
    /// RL training from a cold-start checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cold-start checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start from raw parameters instead of a cold-start checkpoint.
        #[arg(long)]
        allow_raw_init: bool,
    },
    /// Evaluate a checkpoint on the labeled test split (greedy decoding).
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two evaluation runs on the same test file.
    Report {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = config.load()?;
            let [train, test, explore] = cmd_gen_data(&cfg, &out)?;
            println!(
                "wrote {} with train={train} test={test} explore={explore}",
                out.display()
            );
        }
        Command::Sft {
            config,
            data,
            out,
            init,
            epoch_offset,
        } => {
            let cfg = config.load()?;
            let outcome = cmd_sft(&cfg, &data, &out, init.as_deref(), epoch_offset)?;
            match outcome.final_loss {
                Some(loss) => println!(
                    "wrote {} (final epoch loss {loss:.6})",
                    outcome.checkpoint.display()
                ),
                None => println!(
                    "wrote {} (no training epochs ran)",
                    outcome.checkpoint.display()
                ),
            }
        }
        Command::Train {
            config,
            data,
            out,
            init,
            allow_raw_init,
        } => {
            let cfg = config.load()?;
            let outcome = cmd_train(&cfg, &data, &out, init.as_deref(), allow_raw_init)?;
            print!(
                "wrote {} after {} steps ({} clamped ratios)",
                outcome.checkpoint.display(),
                outcome.steps,
                outcome.ratio_clamp_events
            );
            match outcome.final_eval_score {
                Some(score) => println!("; last held-out score {score:.2}"),
                None => println!(),
            }
        }
        Command::Eval {
            config,
            data,
            checkpoint,
            out,
        } => {
            let cfg = config.load()?;
            let outcome = cmd_eval(&cfg, &data, &checkpoint, &out)?;
            print!("{}", outcome.report_text);
        }
        Command::Report { run_a, run_b, out } => {
            let table = cmd_report(&run_a, &run_b, out.as_deref())?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            ExitCode::FAILURE
        }
    }
}
