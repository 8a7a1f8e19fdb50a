mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fpscm::{fip::FipModel, CoreError, Result};
use fpscm_autograd::AutogradError;

use commands::{ToSource, Task};
use config::{Ini, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "fpscm", version, about = "Fixed-point SCM learning: data generation, ordering and SCM training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// INI file with [run], [gen-data], [fip], [fip-train], [to-encoder], [to-train] and [eval] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic metadataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        preset: Option<String>,
        /// Comma-separated node counts.
        #[arg(long)]
        dims: Option<String>,
        /// Datasets per dimension and graph family.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        standardize: bool,
    },
    /// Train the amortized ordering model on a metadataset.
    TrainTo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Largest number of ordering steps per dataset, or "auto".
        #[arg(long)]
        d_max: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Fit the fixed-point transformer on one dataset.
    TrainFip {
        #[command(flatten)]
        common: Common,
        /// Dataset bundle directory.
        #[arg(long)]
        dataset: PathBuf,
        /// true, file-perm or ckpt.
        #[arg(long, default_value = "true")]
        to_source: String,
        /// Ordering JSON for file-perm, ordering checkpoint for ckpt.
        #[arg(long)]
        to_path: Option<PathBuf>,
        /// Rows per vote when inferring an ordering from a checkpoint.
        #[arg(long, default_value_t = 200)]
        to_chunk: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Score a trained model on graph, counterfactual or generation tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated subset of graph,counterfactual,generation.
        #[arg(long, default_value = "graph")]
        tasks: String,
        #[arg(long)]
        tau: Option<f64>,
    },
}

fn load_config(common: &Common, overrides: &[(&str, &str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply(&Ini::load(path)?)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    for (section, key, v) in overrides {
        if let Some(v) = v {
            cfg.set(section, key, v)?;
        }
    }
    cfg.validate()?;
    std::fs::create_dir_all(&common.out).map_err(|e| CoreError::Io {
        path: common.out.clone(),
        source: e,
    })?;
    Ok(cfg)
}

fn show<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

fn to_source(kind: &str, path: Option<&Path>) -> Result<ToSource> {
    let need = |k: &str| {
        path.map(Path::to_path_buf)
            .ok_or_else(|| CoreError::Argument(format!("--to-source {k} requires --to-path")))
    };
    match kind {
        "true" => Ok(ToSource::Truth),
        "file-perm" => Ok(ToSource::PermFile(need(kind)?)),
        "ckpt" => Ok(ToSource::Checkpoint(need(kind)?)),
        other => Err(CoreError::Argument(format!(
            "unknown --to-source '{other}'; expected true, file-perm or ckpt"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            preset,
            dims,
            count,
            samples,
            standardize,
        } => {
            let cfg = load_config(
                &common,
                &[
                    ("gen-data", "preset", preset),
                    ("gen-data", "dims", dims),
                    ("gen-data", "count", show(&count)),
                    ("gen-data", "samples", show(&samples)),
                    ("gen-data", "standardize", standardize.then(|| "true".to_string())),
                ],
            )?;
            let manifest = commands::gen_data(&cfg, &common.out)?;
            println!("wrote {}", manifest.display());
        }
        Command::TrainTo {
            common,
            manifest,
            d_max,
            epochs,
            resume,
        } => {
            let cfg = load_config(&common, &[("to-train", "d_max", d_max), ("to-train", "epochs", show(&epochs))])?;
            let state = commands::train_to_cmd(&cfg, &manifest, &common.out, resume)?;
            if let Some(last) = state.curve.last() {
                println!("epoch {} loss {:.6} best {:.6}", last.epoch, last.loss, last.best);
            }
            println!("wrote {}", common.out.join(commands::TO_CKPT).display());
        }
        Command::TrainFip {
            common,
            dataset,
            to_source: kind,
            to_path,
            to_chunk,
            epochs,
            tau,
        } => {
            let source = to_source(&kind, to_path.as_deref())?;
            let cfg = load_config(&common, &[("fip-train", "epochs", show(&epochs)), ("fip", "tau", show(&tau))])?;
            let model: FipModel = commands::train_fip_cmd(&cfg, &dataset, &source, to_chunk, &common.out)?;
            println!("ordering {:?}", model.perm().map());
            println!("wrote {}", common.out.join(commands::FIP_CKPT).display());
        }
        Command::Eval {
            common,
            ckpt,
            dataset,
            tasks,
            tau,
        } => {
            let tasks: Vec<Task> = commands::parse_tasks(&tasks)?;
            let cfg = load_config(&common, &[("fip", "tau", show(&tau))])?;
            for (task, report) in commands::eval_cmd(&cfg, &ckpt, &dataset, &tasks, &common.out)? {
                println!("{}: {} {}", task.name(), report.metric, report.summary());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &CoreError) -> u8 {
    match err {
        CoreError::Argument(_) | CoreError::Config(_) => 2,
        CoreError::Numeric { .. } | CoreError::Autograd(AutogradError::NonFinite { .. }) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
