//! Command-line driver: argument parsing and exit-code mapping. The
//! subcommands themselves live in [`commands`].

pub mod commands;
pub mod report;

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

/// Exit status for domain and validation failures.
pub const EXIT_FAILURE: i32 = 1;
/// Exit status for usage errors.
pub const EXIT_USAGE: i32 = 2;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PDISTILL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "pdistill",
    version,
    about = "Staged knowledge distillation for small transformer encoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the teacher by masked-token prediction on the general corpus.
    Pretrain(RunArgs),
    /// Finetune the pretrained teacher on the task data.
    FinetuneTeacher(TeacherArgs),
    /// Distill a student through the configured schedule.
    Distill(TeacherArgs),
    /// Distill with some stages removed; transition violations are reported, not fatal.
    Ablate {
        #[command(flatten)]
        run: TeacherArgs,
        /// Stage names to drop, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        drop: Vec<String>,
    },
    /// Evaluate a checkpoint on one split of the task.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "dev")]
        split: SplitArg,
    },
    /// Write the synthetic corpus, task and a run config that reads them.
    Datagen(RunArgs),
    /// Aggregate finished runs into a mean and standard deviation table.
    Report {
        /// Run directories, each holding a `result.json`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Print the parameter count of a model or run configuration.
    Paramcount {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`, then
    /// `$PDISTILL_OUT_DIR`, then `runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TeacherArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Pretrained teacher checkpoint; defaults to `<out>/teacher_pretrained.ckpt`.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Finetuned teacher checkpoint; defaults to `<out>/teacher_finetuned.ckpt`.
    #[arg(long)]
    pub finetuned: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Ood,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            EXIT_FAILURE
        }
    }
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}
