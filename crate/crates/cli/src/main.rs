//! `freeseg`: segment images, fill the model cache, score datasets and run
//! ablation grids.
//!
//! Exit codes: 0 success, 1 config error, 2 backend error, 3 I/O error.

mod args;
mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::{Common, DatasetArgs, VocabArgs};

#[derive(Parser, Debug)]
#[command(name = "freeseg", version, about = "Training-free zero-shot segmentation from diffusion features")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment images; writes labels, overlay, clusters, masks and caption
    /// files per image into --out.
    Segment {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the backend over a directory of images and store everything a
    /// later offline run needs. Corrupt entries are replaced.
    Cache {
        dir: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
    },
    /// Score a dataset: per-class IoU, mIoU and pixel accuracy.
    Bench {
        #[command(flatten)]
        data: DatasetArgs,
        /// Also write an overlay PNG per image.
        #[arg(long)]
        overlays: bool,
        /// Directory for the report files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark every cell of a grid (TOML file or a built-in preset).
    Ablate {
        #[arg(required_unless_present = "preset")]
        grid: Option<PathBuf>,
        /// stages, features, refinement or coco-k.
        #[arg(long, conflicts_with = "grid")]
        preset: Option<String>,
        #[command(flatten)]
        data: DatasetArgs,
        /// Directory for the report files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let common = &cli.common;
    let result = match &cli.command {
        Command::Segment { images, vocab, out } => commands::segment(common, vocab, images, out),
        Command::Cache { dir, vocab } => commands::cache(common, vocab, dir),
        Command::Bench { data, overlays, out } => commands::bench(common, data, out.as_deref(), *overlays),
        Command::Ablate { grid, preset, data, out } => {
            commands::ablate(common, data, grid.as_deref(), preset.as_deref(), out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("freeseg: {e}");
            e.exit_code()
        }
    }
}
