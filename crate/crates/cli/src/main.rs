use std::path::PathBuf;
use std::process::ExitCode;

use beatgan::harness::Method;
use beatgan::HeartbeatClass;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod manifest;

use error::CliError;

/// ECG beat imaging, adversarial oversampling and CNN evaluation.
///
/// Every stage reads and writes under `--out`; later stages pick up what the
/// earlier ones left there.
#[derive(Debug, Parser)]
#[command(name = "beatgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the master seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory shared by all stages.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment and rasterize the configured records into `dataset/`, split 70/10/20.
    Preprocess(Common),
    /// Train the InfoGAN of one class, writing snapshots to `gan/<class>/`.
    TrainGan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        class: HeartbeatClass,
    },
    /// Score every snapshot with the `original` classifier and copy the best to `selected/<class>/`.
    SelectSnapshot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        class: HeartbeatClass,
    },
    /// Sample synthetic beats from the selected snapshot into `synthetic/<class>/`.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        class: HeartbeatClass,
        /// Defaults to the number needed to reach the balance target.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Oversample the minority classes into `balanced/<method>/`.
    Balance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        /// Add exactly this many items per minority class instead of topping up.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the classifier on the original or a balanced dataset into `cnn/<method>/`.
    TrainCnn {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "original")]
        method: Method,
    },
    /// Evaluate `cnn/<method>/` on the test split into `evaluation/<method>/`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "original")]
        method: Method,
    },
    /// Repeated method comparison into `experiment/`.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Compare only this method.
        #[arg(long)]
        method: Option<Method>,
        /// Adversarial items per minority class.
        #[arg(long)]
        count: Option<usize>,
    },
    /// F1 curves as synthetic items are added, into `injection/<class>/`.
    InjectionStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        class: HeartbeatClass,
        #[arg(long, default_value = "adversarial")]
        method: Method,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    use commands as c;
    match command {
        Command::Preprocess(common) => c::preprocess(&common),
        Command::TrainGan { common, class } => c::train_gan(&common, class),
        Command::SelectSnapshot { common, class } => c::select_snapshot(&common, class),
        Command::Generate { common, class, count } => c::generate(&common, class, count),
        Command::Balance { common, method, count } => c::balance(&common, method, count),
        Command::TrainCnn { common, method } => c::train_cnn(&common, method),
        Command::Evaluate { common, method } => c::evaluate(&common, method),
        Command::Experiment { common, method, count } => c::experiment(&common, method, count),
        Command::InjectionStudy { common, class, method } => c::injection_study(&common, class, method),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
