use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "sgen", version, about = "Multi-scale face restoration with a sequential gating ensemble network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Run configuration (key = value file); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides both the training seed and the degradation seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator and write its checkpoint and a loss log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint output path (overrides checkpoint_out).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Loss log path (overrides log_out; stdout when neither is set).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Restore one PPM image with a trained generator.
    Restore {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-scale PSNR/SSIM of a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root (overrides data_root); the synthetic corpus is used when neither is set.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Report path; a `.csv` sibling is written next to it (overrides report_out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write clean/corrupted pairs for every image of a directory at every scale.
    Degrade {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the double-precision gradient-check battery.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Also run a check with a deliberately broken backward rule.
        #[arg(long, hide = true)]
        include_faulty_fixture: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common, checkpoint, out } => commands::train(&common, checkpoint, out),
        Command::Restore { common, checkpoint, input, out } => {
            commands::restore(&common, &checkpoint, &input, &out)
        }
        Command::Evaluate { common, checkpoint, input, out } => {
            commands::evaluate(&common, &checkpoint, input, out)
        }
        Command::Degrade { common, input, out } => commands::degrade(&common, &input, &out),
        Command::Gradcheck { common: _, include_faulty_fixture } => commands::gradcheck(include_faulty_fixture),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
