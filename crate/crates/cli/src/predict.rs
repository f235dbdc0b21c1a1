use std::path::{Path, PathBuf};

use fcbfuse::data::{normalize_image, read_rgb, IMAGE_EXTENSIONS};
use fcbfuse::eval::binarize;
use fcbfuse::model::Model;
use fcbfuse::nn::Ctx;
use fcbfuse::tensor::{resize_chw, ParamStore, ResampleMode, Tape, Tensor};
use image::GrayImage;

use crate::eval::load_checkpoint;
use crate::exit::{CliError, CliResult};

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub dump_features: bool,
    pub ablate_fcb: bool,
    pub resize_to_source: bool,
}

/// Expands directories into their image files (sorted); files pass through.
fn expand_inputs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::data(format!("cannot list {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn save_gray(path: &Path, h: usize, w: usize, pixels: Vec<u8>) -> CliResult<()> {
    GrayImage::from_raw(w as u32, h as u32, pixels)
        .expect("buffer sized to the image")
        .save(path)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// `[1, H, W]` binary mask as 0/255, optionally nearest-resized.
fn save_mask(path: &Path, mask: &Tensor<f32>, to: Option<(usize, usize)>) -> CliResult<()> {
    let mask = match to {
        Some((h, w)) if (h, w) != (mask.shape()[1], mask.shape()[2]) => {
            let tape = Tape::inference();
            let s = mask.shape();
            let v = tape.constant(mask.clone().reshape(&[1, 1, s[1], s[2]])?);
            tape.interpolate2d(&v, h, w, ResampleMode::Nearest, false)?.into_tensor().reshape(&[1, h, w])?
        }
        _ => mask.clone(),
    };
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    save_gray(path, h, w, mask.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect())
}

/// Channel-wise mean of `[1, C, H, W]`, min-max scaled to 0..255.
fn save_feature_mean(path: &Path, f: &Tensor<f32>) -> CliResult<()> {
    let s = f.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    let mean: Vec<f32> = (0..hw).map(|i| (0..c).map(|k| f.data()[k * hw + i]).sum::<f32>() / c as f32).collect();
    let lo = mean.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = mean.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    save_gray(path, s[2], s[3], mean.iter().map(|&v| ((v - lo) / span * 255.0).round() as u8).collect())
}

fn predict_one(model: &Model, params: &ParamStore<f32>, a: &PredictArgs, path: &Path) -> CliResult<Vec<PathBuf>> {
    let image = read_rgb(path)?;
    let source = (image.shape()[1], image.shape()[2]);
    let (h, w) = model.config().input_hw;
    let x = normalize_image(&resize_chw(&image, h, w, true)).reshape(&[1, 3, h, w])?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    let to = a.resize_to_source.then_some(source);
    let mut written = Vec::new();
    let mut emit_mask = |suffix: &str, ablate: bool| -> CliResult<()> {
        let probs = model.predict_probs(params, &x, ablate)?;
        let file = a.out.join(format!("{stem}_{suffix}.png"));
        save_mask(&file, &binarize(&probs.index_first(0)), to)?;
        written.push(file);
        Ok(())
    };
    emit_mask("mask", false)?;
    if a.ablate_fcb {
        emit_mask("withfcb", false)?;
        emit_mask("withoutfcb", true)?;
    }
    if a.dump_features {
        let Model::Fcbformer(m) = model else {
            return Err(CliError::config("feature export needs an FCBFormer checkpoint"));
        };
        let tape = Tape::inference();
        let parts = m.forward_parts(&Ctx::new(&tape, params), &tape.constant(x.clone()))?;
        for (suffix, f) in [("tb", &parts.tb), ("fcb", &parts.fcb)] {
            let file = a.out.join(format!("{stem}_{suffix}.png"));
            save_feature_mean(&file, f.value())?;
            written.push(file);
        }
    }
    Ok(written)
}

pub fn run(a: &PredictArgs) -> CliResult<()> {
    let ck = load_checkpoint(&a.checkpoint, None)?;
    let model = Model::new(&ck.config)?;
    if a.ablate_fcb && !matches!(model, Model::Fcbformer(_)) {
        return Err(CliError::config("--ablate-fcb needs an FCBFormer checkpoint"));
    }
    if a.dump_features && !matches!(model, Model::Fcbformer(_)) {
        return Err(CliError::config("--dump-features needs an FCBFormer checkpoint"));
    }
    let files = expand_inputs(&a.inputs)?;
    if files.is_empty() {
        return Err(CliError::data("no input images given"));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::config(format!("cannot create {}: {e}", a.out.display())))?;
    let mut failed = 0;
    for f in &files {
        match predict_one(&model, &ck.params, a, f) {
            Ok(written) => {
                for w in written {
                    println!("{}", w.display());
                }
            }
            Err(e) => {
                eprintln!("error: {}: {e}", f.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(CliError::data(format!("{failed} of {} inputs failed", files.len())));
    }
    Ok(())
}
