//! One binary, seven subcommands: synthesize scenes, train fields, render,
//! build restriction grids, fuse depth maps, score geometry, and run the
//! ablation matrix.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "monopatch", version, about = "Patch-guided radiance-field reconstruction")]
struct Cli {
    /// Worker threads (default: logical cores; MONOPATCH_THREADS as fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle with ground truth.
    Synth {
        /// Scene preset: box | plane.
        #[arg(long, default_value = "box")]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Views to generate (preset default when omitted).
        #[arg(long)]
        views: Option<usize>,
        /// Also write perturbed metric depth maps under mvs_depth/.
        #[arg(long, default_value_t = false)]
        with_mvs: bool,
    },
    /// Train a radiance field on a scene directory.
    Train {
        #[arg(long)]
        scene: PathBuf,
        /// Key-value config file overriding defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Disable ingredients: mono | virtual | restriction | patch.
        #[arg(long, value_delimiter = ',')]
        disable: Vec<String>,
        /// Metric depth maps enabling the MVS supervision term.
        #[arg(long)]
        mvs_depth: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        patches: Option<usize>,
    },
    /// Render color/depth/normal maps for every view from a checkpoint.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional restriction grid dump honored during rendering.
        #[arg(long)]
        restriction: Option<PathBuf>,
    },
    /// Build and dump the density restriction grid for a scene.
    Restriction {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 0.2)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fuse per-view depth maps into a point cloud.
    Fuse {
        #[arg(long)]
        scene: PathBuf,
        /// Directory of PFM depth maps (e.g. a render output).
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        eps_rel: f64,
        #[arg(long, default_value_t = 2)]
        min_support: usize,
    },
    /// Score a predicted cloud against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Distance thresholds as fractions of the scene width when --scene
        /// is given, else absolute units.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.02, 0.05])]
        tau: Vec<f64>,
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Depth-map directory for rel / inlier-ratio metrics.
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the ablation toggle matrix on one synthetic scene.
    Ablate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rows as comma-separated toggle sets from {p,m,v,r}, "-" for none
        /// (default: the seven reference rows).
        #[arg(long)]
        rows: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        patches: Option<usize>,
        #[arg(long)]
        mvs_depth: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // Usage problems (unknown flags, missing arguments) are validation
    // failures: exit 1. Help and version print normally.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("MONOPATCH_THREADS")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or_else(num_threads_default);
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("thread pool: {e}");
        return ExitCode::from(2);
    }

    let result = match cli.command {
        Command::Synth {
            spec,
            seed,
            out,
            views,
            with_mvs,
        } => commands::synth(&spec, seed, &out, views, with_mvs),
        Command::Train {
            scene,
            config,
            out,
            disable,
            mvs_depth,
            seed,
            steps,
            patches,
        } => commands::train_cmd(
            &scene,
            config.as_deref(),
            &out,
            &disable,
            mvs_depth.as_deref(),
            seed,
            steps,
            patches,
        ),
        Command::Render {
            scene,
            checkpoint,
            out,
            restriction,
        } => commands::render_cmd(&scene, &checkpoint, &out, restriction.as_deref()),
        Command::Restriction {
            scene,
            out,
            resolution,
            tolerance,
            seed,
        } => commands::restriction_cmd(&scene, &out, resolution, tolerance, seed),
        Command::Fuse {
            scene,
            depth,
            out,
            eps_rel,
            min_support,
        } => commands::fuse_cmd(&scene, &depth, &out, eps_rel, min_support),
        Command::Eval {
            pred,
            gt,
            tau,
            scene,
            depth,
            out,
        } => commands::eval_cmd(
            &pred,
            &gt,
            &tau,
            scene.as_deref(),
            depth.as_deref(),
            out.as_deref(),
        ),
        Command::Ablate {
            scene,
            out,
            rows,
            seed,
            steps,
            patches,
            mvs_depth,
        } => commands::ablate_cmd(
            &scene,
            &out,
            rows.as_deref(),
            seed,
            steps,
            patches,
            mvs_depth.as_deref(),
        ),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let validation = e.downcast_ref::<commands::ValidationError>().is_some();
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}
