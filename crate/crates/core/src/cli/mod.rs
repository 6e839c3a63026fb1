//! Command-line interface: argument definitions and dispatch.

pub mod commands;
pub mod image;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::*;

use crate::config::RunConfig;
use crate::descriptor::Normalization;
use crate::error::{Error, Result};
use crate::metrics::{DistanceKind, Metric};

#[derive(Debug, Parser)]
#[command(
    name = "patchrbm",
    version,
    about = "Learn and evaluate RBM patch descriptors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Data root holding one directory per scene (or a scene directory itself).
    #[arg(long, env = DATA_ENV)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus in the archive layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        points: usize,
        #[arg(long, default_value_t = 4)]
        views: usize,
    },
    /// Train a model and write its container.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the training scenes, e.g. LY+ND+HD.
        #[arg(long)]
        scenes: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch JSON lines log (default: <out>.log.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write descriptors of a scene's patches.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Scene directory name under the data root.
        #[arg(long)]
        scenes: Option<String>,
        /// Only extract patches referenced by this match file.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Metric the descriptors are meant for (jsd scales the mcRBM pooling).
        #[arg(long)]
        metric: Option<Metric>,
        /// Write binarized descriptors (needs a binarized model).
        #[arg(long)]
        binary: bool,
        #[arg(long, default_value_t = 3.0)]
        p_scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the binarization threshold on the model's training patches.
    Binarize {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Output container (default: overwrite the input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model or a descriptor dump on a scene's match pairs.
    Evaluate {
        #[arg(long, conflicts_with = "dump", required_unless_present = "dump")]
        model: Option<PathBuf>,
        #[arg(long)]
        dump: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        scenes: Option<String>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, default_value = "l1")]
        metric: Metric,
        #[arg(long, default_value = "none")]
        norm: Normalization,
        #[arg(long, default_value_t = 3.0)]
        p_scale: f64,
        /// File the flat grid row is appended to (default: <out>.rows.tsv).
        #[arg(long)]
        grid_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the full train-scene x test-scene x metric grid.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the test scenes, e.g. LY,ND,HD.
        #[arg(long)]
        scenes: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Save the learned filters as a tiled grayscale image (.png or .pgm).
    ExportFilters {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => RunConfig::parse(""),
    }
}

fn data_root(d: &DataArgs) -> Result<&Path> {
    d.data
        .as_deref()
        .ok_or_else(|| Error::arg(format!("no data directory; pass --data or set {DATA_ENV}")))
}

fn scene_arg(d: &DataArgs, scene: Option<&str>) -> Result<PathBuf> {
    let root = data_root(d)?;
    match scene {
        Some(s) => scene_dir(root, s),
        None => Ok(root.to_path_buf()),
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            points,
            views,
        } => {
            let pairs = cmd_synth(&out, seed, points, views)?;
            println!("wrote {} patches and {}", points * views, pairs.display());
        }
        Command::Train {
            config,
            data,
            seed,
            scenes,
            out,
            log,
        } => {
            let mut cfg = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            if let Some(s) = scenes {
                cfg.scenes = crate::config::parse_scene_list(&s)?;
            }
            let model = cmd_train(&cfg, data_root(&data)?, &out, log.as_deref())?;
            println!(
                "trained {} (seed {}) -> {}",
                model.kind_code(),
                cfg.seed(),
                out.display()
            );
        }
        Command::Extract {
            model,
            data,
            scenes,
            pairs,
            metric,
            binary,
            p_scale,
            out,
        } => {
            let scene = scene_arg(&data, scenes.as_deref())?;
            let opts = ExtractOptions {
                pairs: pairs.as_deref(),
                metric,
                binary,
                p_scale,
            };
            let dump = cmd_extract(&model, &scene, &opts, &out)?;
            println!(
                "wrote {} descriptors to {}",
                dump.descriptors.len(),
                out.display()
            );
        }
        Command::Binarize { model, data, out } => {
            let out = out.unwrap_or_else(|| model.clone());
            let t = cmd_binarize(&model, data_root(&data)?, &out)?;
            println!("threshold {t} stored in {}", out.display());
        }
        Command::Evaluate {
            model,
            dump,
            data,
            scenes,
            pairs,
            metric,
            norm,
            p_scale,
            grid_file,
            out,
        } => {
            let scene = match (&data.data, &scenes) {
                (None, None) => None,
                _ => Some(scene_arg(&data, scenes.as_deref())?),
            };
            let grid_file = grid_file.unwrap_or_else(|| with_suffix(&out, ".rows.tsv"));
            let opts = EvaluateOptions {
                scene: scene.as_deref(),
                pairs: pairs.as_deref(),
                kind: DistanceKind::new(metric, norm)?,
                p_scale,
                grid_file: Some(&grid_file),
            };
            let input = match (&model, &dump) {
                (Some(m), _) => EvalInput::Model(m),
                (None, Some(d)) => EvalInput::Dump(d),
                (None, None) => return Err(Error::arg("pass --model or --dump")),
            };
            let r = cmd_evaluate(input, &opts, &out)?;
            println!(
                "{} {}: 95% error rate {:.2}%",
                r.scene,
                r.kind.label(),
                r.error_rate_95
            );
        }
        Command::Grid {
            config,
            data,
            seed,
            scenes,
            out,
        } => {
            let mut cfg = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.grid_seeds = vec![s];
            }
            if let Some(s) = scenes {
                cfg.grid_test = crate::config::parse_scene_list(&s)?;
            }
            let cells = cmd_grid(&cfg, data_root(&data)?, &out)?;
            print!("{}", format_grid(cfg.kind.code(), &cfg, &cells));
        }
        Command::ExportFilters { model, out } => {
            let s = cmd_export_filters(&model, &out)?;
            println!(
                "{} tiles, {}x{} px -> {}",
                s.tiles,
                s.width,
                s.height,
                out.display()
            );
        }
    }
    Ok(())
}
