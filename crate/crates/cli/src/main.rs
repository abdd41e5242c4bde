//! `hgd` — batch entry points for the grasp-diffusion pipeline: synthetic
//! data generation, score-model training, (guided) sampling, constraint
//! extraction, evaluation, and the benchmark harness.
//!
//! Every command is deterministic given its configuration and seed, and
//! writes the effective configuration next to its outputs. Exit codes:
//! 0 success, 2 usage or configuration errors, 3 infeasible data,
//! 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Preset, RunConfig};
use hgdiffuser::error::Result;

#[derive(Parser)]
#[command(name = "hgd", version, about = "Demonstration-guided diffusion sampling of parallel-jaw grasps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML configuration file overlaying the preset defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset providing the defaults: desk (CPU-minutes) or paper
    /// (the published 500-epoch protocol).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread cap (the implementation is single-threaded; any value
    /// >= 1 is accepted).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of objects, grasp labels, and demos.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated object kinds (box, cylinder, lshape).
        #[arg(long)]
        objects: Option<String>,
        /// Size variants per kind.
        #[arg(long)]
        variants: Option<usize>,
        /// Grasp labels per object.
        #[arg(long)]
        grasps: Option<usize>,
        /// Points per object cloud.
        #[arg(long)]
        points: Option<usize>,
        /// Overwrite an existing non-empty directory.
        #[arg(long)]
        force: bool,
        /// Also export ASCII PLY clouds for viewing.
        #[arg(long)]
        ply: bool,
    },
    /// Train the score network on a dataset.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint at --out, keeping epoch numbering.
        #[arg(long)]
        resume: bool,
        /// Epoch-count override.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Draw grasps from a trained model, optionally demo-guided.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Object JSON (an entry from the dataset's objects/ directory).
        #[arg(long)]
        object: PathBuf,
        /// Demonstration JSON; absent means task-agnostic sampling.
        #[arg(long)]
        demo: Option<PathBuf>,
        /// Guidance scale override.
        #[arg(long)]
        alpha: Option<f64>,
        /// Number of samples.
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Output JSON pose list (diagnostics go to <out>.diag.json).
        #[arg(long)]
        out: PathBuf,
        /// Optional NDJSON trajectory dump.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Optional PLY export of the cloud plus sampled gripper points.
        #[arg(long)]
        ply: Option<PathBuf>,
    },
    /// Extract the task constraint from a demonstration.
    ExtractConstraints {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        demo: PathBuf,
        #[arg(long)]
        object: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one method over a dataset.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// guided or two-stage.
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 100)]
        n_samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full method-comparison benchmark.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print or write the effective configuration.
    Config {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn effective_config(common: &CommonArgs) -> Result<RunConfig> {
    let preset = match &common.preset {
        Some(p) => Some(Preset::parse(p)?),
        None => None,
    };
    let mut cfg = RunConfig::with_preset(preset);
    if let Some(path) = &common.config {
        cfg.merge_file(path)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData {
            common,
            out,
            objects,
            variants,
            grasps,
            points,
            force,
            ply,
        } => {
            let mut cfg = effective_config(&common)?;
            if let Some(objects) = objects {
                cfg.dataset.kinds = objects.split(',').map(|s| s.trim().to_string()).collect();
            }
            if let Some(v) = variants {
                cfg.dataset.variants = v;
            }
            if let Some(g) = grasps {
                cfg.dataset.grasps_per_object = g;
            }
            if let Some(p) = points {
                cfg.dataset.points_per_cloud = p;
            }
            cfg.validate()?;
            commands::gen_data(&cfg, &out, force, ply)
        }
        Command::Train {
            common,
            data,
            out,
            resume,
            epochs,
        } => {
            let mut cfg = effective_config(&common)?;
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            cfg.train.seed = cfg.seed;
            cfg.validate()?;
            commands::train_cmd(&cfg, &data, &out, resume)
        }
        Command::Sample {
            common,
            ckpt,
            object,
            demo,
            alpha,
            n,
            out,
            trajectory,
            ply,
        } => {
            let cfg = effective_config(&common)?;
            commands::sample_cmd(
                &cfg,
                &commands::SampleArgs {
                    ckpt,
                    object,
                    demo,
                    alpha,
                    n,
                    out,
                    trajectory,
                    ply,
                },
            )
        }
        Command::ExtractConstraints {
            common,
            demo,
            object,
            out,
        } => {
            let cfg = effective_config(&common)?;
            commands::extract_cmd(&cfg, &demo, &object, &out)
        }
        Command::Eval {
            common,
            ckpt,
            data,
            method,
            n_samples,
            out,
        } => {
            let cfg = effective_config(&common)?;
            commands::eval_cmd(&cfg, &ckpt, &data, &method, n_samples, &out)
        }
        Command::Bench {
            common,
            ckpt,
            data,
            out,
        } => {
            let cfg = effective_config(&common)?;
            commands::bench_cmd(&cfg, &ckpt, &data, &out)
        }
        Command::Config { common, out } => {
            let cfg = effective_config(&common)?;
            commands::dump_config(&cfg, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
