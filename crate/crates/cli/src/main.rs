//! `ggtvae`: split graphs, train, evaluate and analyze graph transformer
//! VAEs from JSON experiment configs.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ggt_vae::eval::Which;
use ggt_vae::graph::SplitConfig;

use commands::{AnalyzeArgs, EvalArgs, SbmArgs, SplitArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "ggtvae", version, about = "Graph transformer variational autoencoder for link prediction")]
struct Cli {
    /// Log more to stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split edges into train/val/test with sampled negatives.
    Split {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        val_frac: f64,
        #[arg(long, default_value_t = 0.10)]
        test_frac: f64,
        /// Keep only this fraction of test positives (negatives follow).
        #[arg(long)]
        eval_subsample: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every seed of an experiment config and aggregate test metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker processes for seeds (1 runs them sequentially in-process).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, hide = true)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on the stored val or test edges.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value = "test")]
        which: Which,
        /// Directory with nodes.tsv and edges.tsv; defaults to the paths
        /// recorded in the checkpoint.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Print full-precision JSON instead of rounded text.
        #[arg(long)]
        json: bool,
    },
    /// Attention-by-distance, globality and latent exports.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory with nodes.tsv and edges.tsv.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Leave self-attention (distance 0) out of globality.
        #[arg(long)]
        exclude_self: bool,
    },
    /// Write a stochastic block model graph as nodes.tsv/edges.tsv.
    SynthSbm {
        #[arg(long, value_delimiter = ',', default_value = "50,50")]
        blocks: Vec<usize>,
        #[arg(long, default_value_t = 0.3)]
        p_in: f64,
        #[arg(long, default_value_t = 0.02)]
        p_out: f64,
        /// Standard-normal features of this width instead of one-hot ids.
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cmd: Cmd) -> Result<(), error::CliError> {
    match cmd {
        Cmd::Split {
            nodes,
            edges,
            val_frac,
            test_frac,
            eval_subsample,
            seed,
            out,
        } => commands::split(&SplitArgs {
            nodes,
            edges,
            config: SplitConfig {
                val_frac,
                test_frac,
                eval_subsample,
            },
            seed,
            out,
        }),
        Cmd::Train {
            config,
            out_dir,
            jobs,
            seed,
        } => commands::train(&TrainArgs {
            config,
            out_dir,
            jobs,
            only_seed: seed,
        }),
        Cmd::Eval {
            checkpoint,
            split,
            which,
            graph,
            json,
        } => commands::eval(&EvalArgs {
            checkpoint,
            split,
            which,
            graph,
            json,
        }),
        Cmd::Analyze {
            checkpoint,
            graph,
            split,
            out_dir,
            exclude_self,
        } => commands::analyze_cmd(&AnalyzeArgs {
            checkpoint,
            graph,
            split,
            out_dir,
            exclude_self,
        }),
        Cmd::SynthSbm {
            blocks,
            p_in,
            p_out,
            feature_dim,
            seed,
            out_dir,
        } => commands::synth_sbm(&SbmArgs {
            blocks,
            p_in,
            p_out,
            feature_dim,
            seed,
            out_dir,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
