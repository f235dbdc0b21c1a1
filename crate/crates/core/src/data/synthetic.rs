//! Procedural polyp-like image/mask pairs for smoke tests and toy runs.

use std::path::Path;

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SamplePair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlobShape {
    Circle,
    /// Rotated ellipses with aspect ratio up to 2.
    Ellipse,
}

/// One bright textured blob on a darker shaded background per image.
pub fn generate(n: usize, side: usize, seed: u64, shape: BlobShape) -> Vec<SamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefix = match shape {
        BlobShape::Circle => "circle",
        BlobShape::Ellipse => "ellipse",
    };
    (0..n)
        .map(|i| {
            let s = side as f64;
            let r = rng.gen_range(0.15..0.3) * s;
            let (cy, cx) = (rng.gen_range(r..s - r), rng.gen_range(r..s - r));
            let (ry, rx, theta) = match shape {
                BlobShape::Circle => (r, r, 0.0),
                BlobShape::Ellipse => (r, r * rng.gen_range(0.5..1.0), rng.gen_range(0.0..std::f64::consts::PI)),
            };
            let (sin, cos) = f64::sin_cos(theta);
            let bg = [rng.gen_range(0.25..0.4), rng.gen_range(0.1..0.2), rng.gen_range(0.1..0.2)];
            let fg = [rng.gen_range(0.75..0.95), rng.gen_range(0.4..0.6), rng.gen_range(0.3..0.45)];
            let hw = side * side;
            let mut image = vec![0.0f32; 3 * hw];
            let mut mask = vec![0.0f32; hw];
            for y in 0..side {
                for x in 0..side {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    let u = (cos * dx + sin * dy) / rx;
                    let v = (-sin * dx + cos * dy) / ry;
                    let inside = u * u + v * v <= 1.0;
                    let shade = 0.85 + 0.15 * (y as f64 / s);
                    let noise = rng.gen_range(-0.04..0.04);
                    let base = if inside { fg } else { bg };
                    for c in 0..3 {
                        image[c * hw + y * side + x] = ((base[c] * shade + noise) as f32).clamp(0.0, 1.0);
                    }
                    mask[y * side + x] = inside as u8 as f32;
                }
            }
            SamplePair {
                id: format!("{prefix}_{i:04}"),
                image: Tensor::new(&[3, side, side], image).expect("sized"),
                mask: Tensor::new(&[1, side, side], mask).expect("sized"),
            }
        })
        .collect()
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `images/<id>.png` and `masks/<id>.png` under `dir`.
pub fn write_dataset(dir: &Path, pairs: &[SamplePair]) -> Result<()> {
    let (img_dir, mask_dir) = (dir.join("images"), dir.join("masks"));
    std::fs::create_dir_all(&img_dir)?;
    std::fs::create_dir_all(&mask_dir)?;
    for p in pairs {
        let (h, w) = p.hw();
        let (img, m) = (p.image.data(), p.mask.data());
        let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb([to_u8(img[i]), to_u8(img[h * w + i]), to_u8(img[2 * h * w + i])])
        });
        let gray = GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([to_u8(m[y as usize * w + x as usize])]));
        let ip = img_dir.join(format!("{}.png", p.id));
        rgb.save(&ip).map_err(|source| Error::Decode { path: ip, source })?;
        let mp = mask_dir.join(format!("{}.png", p.id));
        gray.save(&mp).map_err(|source| Error::Decode { path: mp, source })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset;

    #[test]
    fn round_trip_through_png() {
        let pairs = generate(3, 32, 4, BlobShape::Ellipse);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &pairs).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in pairs.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.mask, b.mask);
            assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn masks_are_nonempty_and_binary() {
        for p in generate(5, 64, 1, BlobShape::Circle) {
            assert!(p.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(p.mask.data().iter().any(|&v| v == 1.0));
        }
    }

    #[test]
    fn loader_contracts() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
        write_dataset(dir.path(), &generate(2, 16, 0, BlobShape::Circle)).unwrap();
        std::fs::remove_file(dir.path().join("masks/circle_0001.png")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MissingMask(s)) => assert_eq!(s, "circle_0001"),
            other => panic!("expected missing mask, got {other:?}"),
        }
        std::fs::write(dir.path().join("masks/circle_0001.png"), b"not a png").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Decode { .. })));
        std::fs::remove_dir_all(dir.path().join("masks")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("masks"), "{err}");
    }
}
