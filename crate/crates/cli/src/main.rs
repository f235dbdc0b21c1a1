//! `fcbfuse train|eval|predict|gradcheck`.
//!
//! Exit codes: 0 ok, 1 gradcheck failure, 2 config, 3 data, 4 numeric abort,
//! 5 checkpoint mismatch.

mod config;
mod eval;
mod exit;
mod gradcheck;
mod predict;
mod train;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fcbfuse::data::Subset;
use fcbfuse::model::Architecture;

use config::{read_config, resolve_threads, RunConfig, SplitMode};
use exit::CliResult;

#[derive(Parser)]
#[command(name = "fcbfuse", version, about = "Train, evaluate and inspect FCBFormer segmentation models")]
struct Cli {
    /// Worker threads (falls back to FCBFUSE_THREADS, then 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a dataset, train, and write best.ckpt, train_log.csv and split.tsv.
    Train(TrainCmd),
    /// Evaluate a checkpoint on a split or a whole dataset.
    Eval(EvalCmd),
    /// Write binary masks (and optional feature maps) for images.
    Predict(PredictCmd),
    /// Run the finite-difference gradient suite in f64.
    Gradcheck(GradcheckCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Fcbformer,
    SsformerI,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Fcbformer => Architecture::Fcbformer,
            ArchArg::SsformerI => Architecture::SsformerI,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Seeded,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct TrainCmd {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum)]
    architecture: Option<ArchArg>,
    /// Network input size.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    size: Option<Vec<usize>>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Reuse an existing `id<TAB>subset` manifest.
    #[arg(long)]
    split_manifest: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Subset of the training split to evaluate.
    #[arg(long, value_enum, default_value = "test", conflicts_with = "full_dataset")]
    split: SubsetArg,
    /// Evaluate every sample of `--data` (generalisability test).
    #[arg(long)]
    full_dataset: bool,
    /// Split manifest; defaults to split.tsv beside the checkpoint.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Expected network input size; a checkpoint of another size is rejected.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    size: Option<Vec<usize>>,
    #[arg(long)]
    train_name: Option<String>,
    #[arg(long)]
    test_name: Option<String>,
    /// Report directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the FCB output with zeros.
    #[arg(long)]
    ablate_fcb: bool,
}

#[derive(Args)]
struct PredictCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write channel-mean images of the TB and FCB outputs.
    #[arg(long)]
    dump_features: bool,
    /// Also write predictions with the FCB output replaced by zeros.
    #[arg(long)]
    ablate_fcb: bool,
    /// Upsample masks (nearest) to the source image size.
    #[arg(long)]
    resize_to_source: bool,
    /// Image files or directories of images.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long, default_value = "toy-64")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict to the named components (repeatable).
    #[arg(long)]
    only: Vec<String>,
    /// Coordinates sampled per tensor in the end-to-end rows.
    #[arg(long, default_value_t = 2)]
    e2e_coords: usize,
    /// List component names and exit.
    #[arg(long)]
    list: bool,
    #[arg(long, hide = true)]
    corrupt_op: Option<String>,
}

fn size_pair(v: &Option<Vec<usize>>) -> Option<(usize, usize)> {
    v.as_ref().map(|s| (s[0], s[1]))
}

fn train_config(c: &TrainCmd, threads: Option<usize>) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &c.preset {
        cfg.model = config::ModelSpec::Preset(p.clone());
    }
    if let Some(a) = c.architecture {
        cfg.architecture = Some(a.into());
    }
    if let Some(s) = size_pair(&c.size) {
        cfg.input_size = Some(s);
    }
    cfg.data = c.data.clone().or(cfg.data);
    cfg.out = c.out.clone().or(cfg.out);
    cfg.seed = c.seed.or(cfg.seed);
    cfg.epochs = c.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = c.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = c.lr.unwrap_or(cfg.lr);
    cfg.weight_decay = c.weight_decay.unwrap_or(cfg.weight_decay);
    if c.no_augment {
        cfg.augment = false;
    }
    if let Some(s) = c.split {
        cfg.split = match s {
            SplitArg::Seeded => SplitMode::Seeded,
            SplitArg::All => SplitMode::All,
        };
    }
    cfg.split_manifest = c.split_manifest.clone().or(cfg.split_manifest);
    cfg.threads = threads.or(cfg.threads);
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = train_config(&c, cli.threads)?;
            if c.print_config {
                let text = serde_json::to_string_pretty(&cfg.fully_resolved()?).expect("config serializes");
                // A closed pipe (e.g. `| head`) is not an error.
                let _ = writeln!(std::io::stdout(), "{text}");
                return Ok(());
            }
            train::run(&cfg)
        }
        Command::Eval(c) => {
            resolve_threads(cli.threads)?;
            eval::run(&eval::EvalArgs {
                checkpoint: c.checkpoint,
                data: c.data,
                subset: match c.split {
                    SubsetArg::Train => Subset::Train,
                    SubsetArg::Val => Subset::Val,
                    SubsetArg::Test => Subset::Test,
                },
                full_dataset: c.full_dataset,
                manifest: c.manifest,
                size: size_pair(&c.size),
                train_name: c.train_name,
                test_name: c.test_name,
                out: c.out,
                ablate_fcb: c.ablate_fcb,
            })
        }
        Command::Predict(c) => {
            resolve_threads(cli.threads)?;
            predict::run(&predict::PredictArgs {
                checkpoint: c.checkpoint,
                inputs: c.inputs,
                out: c.out,
                dump_features: c.dump_features,
                ablate_fcb: c.ablate_fcb,
                resize_to_source: c.resize_to_source,
            })
        }
        Command::Gradcheck(c) => {
            resolve_threads(cli.threads)?;
            if c.list {
                for (name, tier) in fcbfuse::gradsuite::COMPONENTS {
                    println!("{name}\t{}", tier.label());
                }
                return Ok(());
            }
            gradcheck::run(&gradcheck::GradcheckArgs {
                preset: c.preset,
                seed: c.seed,
                only: c.only,
                corrupt_op: c.corrupt_op,
                end_to_end_coords: c.e2e_coords,
            })
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
