use fcbfuse::data::{load_dataset, partition, read_manifest, split_dataset, write_manifest, Split, SplitSpec};
use fcbfuse::model::Model;
use fcbfuse::train::fit;

use crate::config::{ResolvedRun, RunConfig, SplitMode};
use crate::exit::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const SPLIT_FILE: &str = "split.tsv";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let run: ResolvedRun = cfg.resolve()?;
    let items = load_dataset(&run.data)?;
    if items.is_empty() {
        return Err(CliError::data(format!("no images found under {}", run.data.join("images").display())));
    }
    let (train, val, split) = match (&run.split_manifest, run.split) {
        (Some(path), _) => {
            let split = read_manifest(path)?;
            let (train, val, _) = partition(items, &split);
            (train, val, split)
        }
        (None, SplitMode::Seeded) => {
            let (train, val, _, split) = split_dataset(items, &SplitSpec::new(run.seed))?;
            (train, val, split)
        }
        (None, SplitMode::All) => {
            let ids = items.iter().map(|s| s.id.clone()).collect();
            (items.clone(), items, Split { train: ids, ..Split::default() })
        }
    };
    if train.is_empty() || val.is_empty() {
        return Err(CliError::data("the split leaves the training or validation set empty"));
    }

    std::fs::create_dir_all(&run.out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", run.out.display())))?;
    write_manifest(&run.out.join(SPLIT_FILE), &split)?;
    let resolved = serde_json::to_string_pretty(&cfg.fully_resolved()?).expect("config serializes");
    std::fs::write(run.out.join(RUN_CONFIG_FILE), resolved + "\n")
        .map_err(|e| CliError::data(format!("cannot write run config: {e}")))?;

    let model = Model::new(&run.model)?;
    let params = model.init_params(run.seed);
    eprintln!(
        "training {} ({} params) on {} samples, validating on {}, {} epochs, {} thread(s)",
        run.model.name,
        params.param_count(),
        train.len(),
        val.len(),
        run.train.epochs,
        run.threads
    );
    let outcome = fit(&model, params, &train, &val, &run.train, Some(&run.out))?;
    if let Some(last) = outcome.log.last() {
        eprintln!("final epoch {}: train loss {:.4}, val mDice {:.4}", last.epoch, last.train_loss, last.val_mdice);
    }
    println!(
        "best epoch {} val mDice {:.4} -> {} (log {})",
        outcome.best.epoch,
        outcome.best.val_mdice,
        run.out.join(CHECKPOINT_FILE).display(),
        run.out.join(LOG_FILE).display()
    );
    Ok(())
}
