use std::path::{Path, PathBuf};

use fcbfuse::data::{load_dataset, partition, read_manifest, split_ids, SplitSpec, Subset};
use fcbfuse::eval::{evaluate_split, generalisability_eval, ModelPredictor};
use fcbfuse::model::Model;
use fcbfuse::train::Checkpoint;

use crate::exit::{CliError, CliResult, CHECKPOINT};
use crate::train::{RUN_CONFIG_FILE, SPLIT_FILE};

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub subset: Subset,
    pub full_dataset: bool,
    pub manifest: Option<PathBuf>,
    pub size: Option<(usize, usize)>,
    pub train_name: Option<String>,
    pub test_name: Option<String>,
    pub out: Option<PathBuf>,
    pub ablate_fcb: bool,
}

/// Loads a checkpoint, treating every failure (including a missing file) as
/// a checkpoint error, and checks it against its own config and `size`.
pub fn load_checkpoint(path: &Path, size: Option<(usize, usize)>) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::new(CHECKPOINT, format!("{}: {e}", path.display())))?;
    ck.check_against(&ck.config)?;
    if let Some((h, w)) = size {
        ck.check_against(&ck.config.clone().with_input_hw(h, w))?;
    }
    Ok(ck)
}

fn dir_name(p: &Path) -> Option<String> {
    p.canonicalize().ok()?.file_name().map(|s| s.to_string_lossy().into_owned())
}

/// The training data root recorded next to the checkpoint, if any.
fn training_data_name(checkpoint: &Path) -> Option<String> {
    let text = std::fs::read_to_string(checkpoint.parent()?.join(RUN_CONFIG_FILE)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    dir_name(Path::new(v.get("data")?.as_str()?))
}

pub fn run(a: &EvalArgs) -> CliResult<()> {
    let ck = load_checkpoint(&a.checkpoint, a.size)?;
    let model = Model::new(&ck.config)?;
    let items = load_dataset(&a.data)?;
    if items.is_empty() {
        return Err(CliError::data(format!("no images found under {}", a.data.join("images").display())));
    }
    let mut predictor = ModelPredictor::new(&model, &ck.params);
    if a.ablate_fcb {
        predictor = predictor.without_fcb();
    }
    let (report, stem) = if a.full_dataset {
        let train = a.train_name.clone().or_else(|| training_data_name(&a.checkpoint)).unwrap_or_else(|| "unknown".into());
        let test = a.test_name.clone().or_else(|| dir_name(&a.data)).unwrap_or_else(|| "unknown".into());
        (generalisability_eval(&predictor, &train, &test, &items)?, "full".to_string())
    } else {
        let beside = a.checkpoint.parent().map(|d| d.join(SPLIT_FILE)).filter(|p| p.is_file());
        let split = match a.manifest.clone().or(beside) {
            Some(path) => read_manifest(&path)?,
            None => {
                let ids: Vec<String> = items.iter().map(|s| s.id.clone()).collect();
                split_ids(&ids, &SplitSpec::new(ck.seed))?
            }
        };
        let (train, val, test) = partition(items, &split);
        let chosen = match a.subset {
            Subset::Train => train,
            Subset::Val => val,
            Subset::Test => test,
        };
        if chosen.is_empty() {
            return Err(CliError::data(format!("the {} subset is empty for this split", a.subset)));
        }
        (evaluate_split(&predictor, &chosen, &a.subset.to_string())?, a.subset.to_string())
    };
    let mut report = report;
    let meta = &mut report.summary.metadata;
    meta.insert("checkpoint".into(), a.checkpoint.display().to_string().into());
    meta.insert("model".into(), ck.config.name.clone().into());
    meta.insert("architecture".into(), serde_json::to_value(ck.config.architecture).expect("serializes"));
    meta.insert("input_hw".into(), serde_json::json!([ck.config.input_hw.0, ck.config.input_hw.1]));
    meta.insert("ablate_fcb".into(), a.ablate_fcb.into());

    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&out).map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))?;
    let stem = if a.ablate_fcb { format!("{stem}_withoutfcb") } else { stem };
    let (csv, json) = (out.join(format!("{stem}_metrics.csv")), out.join(format!("{stem}_summary.json")));
    report.write_csv(&csv)?;
    report.write_json(&json)?;
    let s = &report.summary;
    println!("{}", s.name);
    println!("mDice\tmIoU\tmPrec.\tmRec.");
    println!("{:.4}\t{:.4}\t{:.4}\t{:.4}", s.mdice, s.miou, s.mprecision, s.mrecall);
    eprintln!("{} samples; wrote {} and {}", s.count, csv.display(), json.display());
    Ok(())
}
