//! Dataset loading, seeded splitting, anti-aliased resizing, augmentation and
//! input normalization.

mod augment;
mod split;
pub mod synthetic;

pub use augment::{apply_augment, augment_pair, color_jitter, gaussian_blur, AugmentConfig, AugmentParams, RngStream};
pub use split::{partition, read_manifest, split_dataset, split_ids, write_manifest, Split, SplitSpec, Subset};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{resize_chw, Tensor};

pub const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// An image `[3, H, W]` and mask `[1, H, W]`, both in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl SamplePair {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let (is, ms) = (image.shape(), mask.shape());
        if is.len() != 3 || is[0] != 3 || ms.len() != 3 || ms[0] != 1 || is[1..] != ms[1..] {
            return Err(Error::shape("sample_pair", format!("image {is:?} and mask {ms:?} disagree")));
        }
        Ok(SamplePair { id: id.into(), image, mask })
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPolicy {
    /// Interpolated values are kept (training targets).
    Soft,
    /// Thresholded at 0.5 after interpolation (evaluation targets).
    Binarized,
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::Dataset { path: dir.to_path_buf(), msg: e.to_string() })? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
                return Err(Error::Dataset { path, msg: format!("duplicate stem (also {})", prev.display()) });
            }
        }
    }
    Ok(out)
}

/// Decodes an 8-bit image to `[3, H, W]` in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Decode { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Decodes a mask to `[1, H, W]`, averaging colour channels.
pub fn read_mask(path: &Path) -> Result<Tensor<f32>> {
    let rgb = read_rgb(path)?;
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    let d = rgb.data();
    let data = (0..h * w).map(|i| (d[i] + d[h * w + i] + d[2 * h * w + i]) / 3.0).collect();
    Tensor::new(&[1, h, w], data)
}

/// Loads `<dir>/images/*` paired with `<dir>/masks/*` by file stem, sorted by
/// id. A directory without an `images/` folder is an empty dataset.
pub fn load_dataset(dir: &Path) -> Result<Vec<SamplePair>> {
    if !dir.is_dir() {
        return Err(Error::Dataset { path: dir.to_path_buf(), msg: "not a directory".into() });
    }
    let img_dir = dir.join("images");
    if !img_dir.is_dir() {
        return Ok(Vec::new());
    }
    let images = image_files(&img_dir)?;
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let mask_dir = dir.join("masks");
    if !mask_dir.is_dir() {
        return Err(Error::Dataset { path: mask_dir, msg: "masks directory missing".into() });
    }
    let masks = image_files(&mask_dir)?;
    let missing: Vec<&str> = images.keys().filter(|k| !masks.contains_key(*k)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::MissingMask(missing.join(", ")));
    }
    images
        .iter()
        .map(|(id, ip)| {
            let pair = SamplePair::new(id.clone(), read_rgb(ip)?, read_mask(&masks[id])?);
            pair.map_err(|e| Error::Dataset { path: ip.clone(), msg: e.to_string() })
        })
        .collect()
}

/// Resizes image and mask with anti-aliased bilinear interpolation.
pub fn resize_pair(s: &SamplePair, hw: (usize, usize), policy: MaskPolicy) -> SamplePair {
    let image = resize_chw(&s.image, hw.0, hw.1, true);
    let mut mask = resize_chw(&s.mask, hw.0, hw.1, true);
    if policy == MaskPolicy::Binarized {
        mask = mask.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    }
    SamplePair { id: s.id.clone(), image, mask }
}

/// `x ↦ 2x − 1`.
pub fn normalize_image(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| 2.0 * v - 1.0)
}

/// Stacks normalized images `[N, 3, H, W]` and masks `[N, 1, H, W]`.
pub fn collate(samples: &[&SamplePair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<Tensor<f32>> = samples.iter().map(|s| normalize_image(&s.image)).collect();
    let masks: Vec<Tensor<f32>> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize) -> Tensor<f32> {
        let data = (0..n * n).map(|i| ((i / n + i % n) % 2) as f32).collect();
        Tensor::new(&[1, n, n], data).unwrap()
    }

    #[test]
    fn same_size_soft_resize_is_identity() {
        let img = Tensor::new(&[3, 5, 4], (0..60).map(|i| i as f32 / 60.0).collect()).unwrap();
        assert!(SamplePair::new("a", img, checkerboard(5)).is_err());
        let img = Tensor::new(&[3, 5, 5], (0..75).map(|i| i as f32 / 75.0).collect()).unwrap();
        let s = SamplePair::new("a", img, checkerboard(5)).unwrap();
        assert_eq!(resize_pair(&s, (5, 5), MaskPolicy::Soft), s);
    }

    #[test]
    fn constant_mask_stays_constant() {
        let s = SamplePair::new("c", Tensor::full(&[3, 13, 9], 0.2), Tensor::ones(&[1, 13, 9])).unwrap();
        for hw in [(4, 4), (13, 9), (40, 27)] {
            let r = resize_pair(&s, hw, MaskPolicy::Soft);
            assert!(r.mask.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn checkerboard_downscale_matches_triangle_filter() {
        // 8 → 4: scale 2, support 2; output o centred at 2o + 1 in input
        // coordinates (half-pixel), taps at distance 0.5 and 1.5 weigh 3 and 1.
        let n = 8;
        let src = checkerboard(n);
        let weights = |o: usize| -> Vec<(usize, f64)> {
            let centre = 2.0 * o as f64 + 1.0;
            let mut taps: Vec<(usize, f64)> = (0..n)
                .map(|i| (i, (1.0 - ((i as f64 + 0.5) - centre).abs() / 2.0).max(0.0)))
                .filter(|t| t.1 > 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        };
        let s = SamplePair::new("cb", Tensor::zeros(&[3, n, n]), src.clone()).unwrap();
        let r = resize_pair(&s, (4, 4), MaskPolicy::Soft);
        for oy in 0..4 {
            for ox in 0..4 {
                let mut want = 0.0;
                for &(iy, wy) in &weights(oy) {
                    for &(ix, wx) in &weights(ox) {
                        want += wy * wx * src.data()[iy * n + ix] as f64;
                    }
                }
                let got = r.mask.data()[oy * 4 + ox] as f64;
                assert!((got - want).abs() < 1e-6, "({oy},{ox}) {got} vs {want}");
            }
        }
        let b = resize_pair(&s, (4, 4), MaskPolicy::Binarized);
        assert!(b.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn normalization_endpoints() {
        let t = Tensor::new(&[3], vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(normalize_image(&t).data(), &[-1.0, 0.0, 1.0]);
    }
}
