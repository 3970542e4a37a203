mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "rationale", version, about = "Paragraph rationale extraction by hard masking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    /// Aligned human-readable tables.
    #[default]
    Table,
    /// Pretty-printed JSON.
    Machine,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// TOML config file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the section the subcommand uses.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskView {
    /// The learned hard mask Z.
    Learned,
    /// Its complement.
    Complement,
    /// Every paragraph.
    Full,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-rationale corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model (or several seeds with `experiment.runs`).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Per-step loss log (TSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Greedy one-weight-at-a-time search over `[[tune.grid]]`.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Score a frozen checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = MaskView::All)]
        mask: MaskView,
    },
    /// Finite-difference check of every training objective.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_probes: Option<usize>,
        /// Corrupts one primitive's backward rule (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Paragraph references found in decision text, 0-based.
    ExtractSilver {
        #[command(flatten)]
        common: Common,
        /// Text file, or `-` for standard input.
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        n_facts: usize,
    },
    /// Corpus statistics per split.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

/// Exit codes: 0 success, 1 bad input, 2 internal failure.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if commands::is_internal(&e) { 2 } else { 1 })
        }
    }
}
