use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SamplePair;
use crate::tensor::Tensor;

/// Deterministic random stream addressed by a root seed and a derivation
/// path such as `(epoch, sample index, stage tag)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn tag_id(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, path: Vec::new() }
    }

    pub fn child(&self, k: u64) -> Self {
        let mut path = self.path.clone();
        path.push(k);
        RngStream { seed: self.seed, path }
    }

    pub fn tagged(&self, tag: &str) -> Self {
        self.child(tag_id(tag))
    }

    pub fn for_sample(seed: u64, epoch: u64, index: u64, tag: &str) -> Self {
        RngStream::new(seed).child(epoch).child(index).tagged(tag)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let stream = self.path.iter().fold(splitmix(self.path.len() as u64), |h, &k| splitmix(h ^ splitmix(k)));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Sampling ranges for each augmentation. Intervals are closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub blur_kernel: usize,
    /// `None` disables blurring.
    pub blur_sigma: Option<(f64, f64)>,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    /// Multiplies the HSV hue channel (wrapping).
    pub hue: (f64, f64),
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub rotation_deg: (f64, f64),
    /// Maximum shift in pixels at `translate_ref` resolution; scaled with image size.
    pub translate_px: f64,
    pub translate_ref: usize,
    pub scale: (f64, f64),
    /// Horizontal shear angle.
    pub shear_deg: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            blur_kernel: 25,
            blur_sigma: Some((0.001, 2.0)),
            brightness: (0.6, 1.4),
            contrast: (0.5, 1.5),
            saturation: (0.75, 1.25),
            hue: (0.99, 1.01),
            hflip_p: 0.5,
            vflip_p: 0.5,
            rotation_deg: (-180.0, 180.0),
            translate_px: 44.0,
            translate_ref: 352,
            scale: (0.5, 1.5),
            shear_deg: (-22.5, 22.0),
        }
    }
}

/// One concrete draw from an [`AugmentConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub blur_sigma: Option<f64>,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub hflip: bool,
    pub vflip: bool,
    pub rotation_deg: f64,
    pub translate: (f64, f64),
    pub scale: f64,
    pub shear_deg: f64,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

impl AugmentConfig {
    /// Every stage disabled or set to its neutral value.
    pub fn identity() -> Self {
        AugmentConfig {
            blur_sigma: None,
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            saturation: (1.0, 1.0),
            hue: (1.0, 1.0),
            hflip_p: 0.0,
            vflip_p: 0.0,
            rotation_deg: (0.0, 0.0),
            translate_px: 0.0,
            scale: (1.0, 1.0),
            shear_deg: (0.0, 0.0),
            ..AugmentConfig::default()
        }
    }

    /// Maximum translation `(dy, dx)` for an `h × w` image.
    pub fn max_translate(&self, h: usize, w: usize) -> (f64, f64) {
        let r = self.translate_ref as f64;
        (self.translate_px * h as f64 / r, self.translate_px * w as f64 / r)
    }

    pub fn sample(&self, rng: &mut impl Rng, h: usize, w: usize) -> AugmentParams {
        let blur_sigma = self.blur_sigma.map(|r| uniform(rng, r));
        let brightness = uniform(rng, self.brightness);
        let contrast = uniform(rng, self.contrast);
        let saturation = uniform(rng, self.saturation);
        let hue = uniform(rng, self.hue);
        let hflip = rng.gen_bool(self.hflip_p.clamp(0.0, 1.0));
        let vflip = rng.gen_bool(self.vflip_p.clamp(0.0, 1.0));
        let rotation_deg = uniform(rng, self.rotation_deg);
        let (my, mx) = self.max_translate(h, w);
        let translate = (uniform(rng, (-my, my)), uniform(rng, (-mx, mx)));
        let scale = uniform(rng, self.scale);
        let shear_deg = uniform(rng, self.shear_deg);
        AugmentParams {
            blur_sigma,
            brightness,
            contrast,
            saturation,
            hue,
            hflip,
            vflip,
            rotation_deg,
            translate,
            scale,
            shear_deg,
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Separable Gaussian blur with a `k × k` kernel and reflect padding.
pub fn gaussian_blur(img: &Tensor<f32>, k: usize, sigma: f64) -> Tensor<f32> {
    let r = (k / 2) as isize;
    let mut w: Vec<f64> = (-r..=r).map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let s = img.shape();
    let (c, h, wd) = (s[0], s[1], s[2]);
    let src = img.data();
    let mut tmp = vec![0.0f64; c * h * wd];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * wd..][..wd];
            for x in 0..wd {
                tmp[(ch * h + y) * wd + x] = w
                    .iter()
                    .enumerate()
                    .map(|(t, wt)| wt * row[reflect(x as isize + t as isize - r, wd)] as f64)
                    .sum();
            }
        }
    }
    let mut out = vec![0.0f32; c * h * wd];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..wd {
                out[(ch * h + y) * wd + x] = w
                    .iter()
                    .enumerate()
                    .map(|(t, wt)| wt * tmp[(ch * h + reflect(y as isize + t as isize - r, h)) * wd + x])
                    .sum::<f64>() as f32;
            }
        }
    }
    Tensor::new(s, out).expect("shape preserved")
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Brightness, contrast, saturation then hue; neutral factors are skipped.
pub fn color_jitter(img: &Tensor<f32>, p: &AugmentParams) -> Tensor<f32> {
    let hw = img.shape()[1] * img.shape()[2];
    let mut d = img.data().to_vec();
    let clamp = |v: f32| v.clamp(0.0, 1.0);
    if p.brightness != 1.0 {
        let b = p.brightness as f32;
        d.iter_mut().for_each(|v| *v = clamp(*v * b));
    }
    if p.contrast != 1.0 {
        let mean = (0..hw).map(|i| gray(d[i], d[hw + i], d[2 * hw + i]) as f64).sum::<f64>() / hw as f64;
        let (c, m) = (p.contrast as f32, mean as f32);
        d.iter_mut().for_each(|v| *v = clamp((*v - m) * c + m));
    }
    if p.saturation != 1.0 {
        let s = p.saturation as f32;
        for i in 0..hw {
            let g = gray(d[i], d[hw + i], d[2 * hw + i]);
            for c in 0..3 {
                d[c * hw + i] = clamp((d[c * hw + i] - g) * s + g);
            }
        }
    }
    if p.hue != 1.0 {
        for i in 0..hw {
            let (h, s, v) = rgb_to_hsv(d[i] as f64, d[hw + i] as f64, d[2 * hw + i] as f64);
            let (r, g, b) = hsv_to_rgb(h * p.hue, s, v);
            d[i] = clamp(r as f32);
            d[hw + i] = clamp(g as f32);
            d[2 * hw + i] = clamp(b as f32);
        }
    }
    Tensor::new(img.shape(), d).expect("shape preserved")
}

fn flip(t: &Tensor<f32>, horizontal: bool) -> Tensor<f32> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = t.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
                out[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    Tensor::new(s, out).expect("shape preserved")
}

impl AugmentParams {
    /// Linear part `A` of the affine map `p' = A (p − c) + c + t`, in (x, y) order.
    pub fn affine_matrix(&self) -> [[f64; 2]; 2] {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let sh = self.shear_deg.to_radians().tan();
        let s = self.scale;
        // s · R(θ) · [[1, sh], [0, 1]]
        [[s * cos, s * (cos * sh - sin)], [s * sin, s * (sin * sh + cos)]]
    }

    pub fn is_identity_affine(&self) -> bool {
        self.rotation_deg == 0.0 && self.shear_deg == 0.0 && self.scale == 1.0 && self.translate == (0.0, 0.0)
    }

    /// Where the pixel centre `(x, y)` lands after flips and the affine map.
    pub fn forward_point(&self, x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
        let x = if self.hflip { w as f64 - x } else { x };
        let y = if self.vflip { h as f64 - y } else { y };
        let a = self.affine_matrix();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (dx, dy) = (x - cx, y - cy);
        (a[0][0] * dx + a[0][1] * dy + cx + self.translate.1, a[1][0] * dx + a[1][1] * dy + cy + self.translate.0)
    }
}

/// Inverse-maps every output pixel centre and samples bilinearly; samples
/// outside the source are zero.
fn warp_affine(t: &Tensor<f32>, p: &AugmentParams) -> Tensor<f32> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let a = p.affine_matrix();
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let src = t.data();
    let mut out = vec![0.0f32; src.len()];
    let at = |ch: usize, yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            0.0
        } else {
            src[(ch * h + yy as usize) * w + xx as usize] as f64
        }
    };
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx - p.translate.1;
            let dy = y as f64 + 0.5 - cy - p.translate.0;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx - 0.5;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let v = (1.0 - fy) * ((1.0 - fx) * at(ch, y0, x0) + fx * at(ch, y0, x0 + 1))
                    + fy * ((1.0 - fx) * at(ch, y0 + 1, x0) + fx * at(ch, y0 + 1, x0 + 1));
                out[(ch * h + y) * w + x] = v as f32;
            }
        }
    }
    Tensor::new(s, out).expect("shape preserved")
}

/// Blur and jitter the image, then flip and warp image and mask together,
/// then clamp both to `[0, 1]`.
pub fn apply_augment(s: &SamplePair, p: &AugmentParams, blur_kernel: usize) -> SamplePair {
    let mut image = s.image.clone();
    let mut mask = s.mask.clone();
    if let Some(sigma) = p.blur_sigma {
        image = gaussian_blur(&image, blur_kernel, sigma);
    }
    image = color_jitter(&image, p);
    if p.hflip {
        image = flip(&image, true);
        mask = flip(&mask, true);
    }
    if p.vflip {
        image = flip(&image, false);
        mask = flip(&mask, false);
    }
    if !p.is_identity_affine() {
        image = warp_affine(&image, p);
        mask = warp_affine(&mask, p);
    }
    let clamp = |t: Tensor<f32>| t.map(|v| v.clamp(0.0, 1.0));
    SamplePair { id: s.id.clone(), image: clamp(image), mask: clamp(mask) }
}

/// Samples parameters from `rng` and applies them.
pub fn augment_pair(s: &SamplePair, cfg: &AugmentConfig, rng: &RngStream) -> SamplePair {
    let (h, w) = s.hw();
    let p = cfg.sample(&mut rng.rng(), h, w);
    apply_augment(s, &p, cfg.blur_kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize, seed: u64) -> SamplePair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = Tensor::new(&[3, h, w], (0..3 * h * w).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let mask = Tensor::new(&[1, h, w], (0..h * w).map(|_| rng.gen::<f32>()).collect()).unwrap();
        SamplePair::new("s", image, mask).unwrap()
    }

    #[test]
    fn identity_config_is_identity() {
        let s = sample(16, 16, 0);
        let out = augment_pair(&s, &AugmentConfig::identity(), &RngStream::new(1));
        assert!(out.image.max_abs_diff(&s.image) <= 1e-6);
        assert!(out.mask.max_abs_diff(&s.mask) <= 1e-6);
    }

    #[test]
    fn double_flip_is_involution() {
        let s = sample(7, 9, 1);
        let p = AugmentParams { hflip: true, ..AugmentConfig::identity().sample(&mut RngStream::new(0).rng(), 7, 9) };
        let once = apply_augment(&s, &p, 25);
        assert_ne!(once.image, s.image);
        assert_eq!(apply_augment(&once, &p, 25), s);
    }

    #[test]
    fn blur_and_jitter_leave_mask_untouched() {
        let s = sample(12, 12, 2);
        let cfg = AugmentConfig { hflip_p: 0.0, vflip_p: 0.0, ..AugmentConfig::identity() };
        let cfg = AugmentConfig { blur_sigma: Some((0.5, 2.0)), brightness: (0.6, 1.4), hue: (0.99, 1.01), ..cfg };
        for i in 0..10 {
            let out = augment_pair(&s, &cfg, &RngStream::for_sample(3, 0, i, "aug"));
            assert_eq!(out.mask, s.mask);
            assert_ne!(out.image, s.image);
        }
    }

    #[test]
    fn determinism_by_path() {
        let s = sample(16, 16, 3);
        let cfg = AugmentConfig::default();
        let a = augment_pair(&s, &cfg, &RngStream::for_sample(7, 2, 5, "aug"));
        let b = augment_pair(&s, &cfg, &RngStream::for_sample(7, 2, 5, "aug"));
        let c = augment_pair(&s, &cfg, &RngStream::for_sample(7, 2, 6, "aug"));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn blur_preserves_constant_and_mass_centre() {
        let t = Tensor::full(&[1, 30, 30], 0.4f32);
        assert!(gaussian_blur(&t, 25, 1.7).data().iter().all(|v| (v - 0.4).abs() < 1e-6));
        let tiny = gaussian_blur(&Tensor::new(&[1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(), 25, 0.001);
        assert_eq!(tiny.data(), &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    }

    #[test]
    fn hsv_round_trip() {
        for (r, g, b) in [(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_follows_the_geometric_transform() {
        let (h, w) = (48, 48);
        let cfg = AugmentConfig { blur_sigma: None, ..AugmentConfig::default() };
        let peak = |t: &Tensor<f32>, c: usize| -> Option<(usize, usize)> {
            let plane = &t.data()[c * h * w..][..h * w];
            let (i, &v) = plane.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
            (v > 0.0).then_some((i / w, i % w))
        };
        let mut checked = 0;
        for k in 0..400u64 {
            let mut rng = RngStream::new(11).child(k).rng();
            let p = cfg.sample(&mut rng, h, w);
            let (py, px) = (rng.gen_range(12..36), rng.gen_range(12..36));
            let mut img = Tensor::<f32>::zeros(&[3, h, w]);
            let mut mask = Tensor::<f32>::zeros(&[1, h, w]);
            for c in 0..3 {
                img.data_mut()[c * h * w + py * w + px] = 1.0;
            }
            mask.data_mut()[py * w + px] = 1.0;
            let p = AugmentParams { brightness: 1.0, contrast: 1.0, saturation: 1.0, hue: 1.0, ..p };
            let out = apply_augment(&SamplePair::new("d", img, mask).unwrap(), &p, 25);
            let (Some(mp), Some(ip)) = (peak(&out.mask, 0), peak(&out.image, 0)) else { continue };
            assert!(mp.0.abs_diff(ip.0) <= 1 && mp.1.abs_diff(ip.1) <= 1);
            let (ex, ey) = p.forward_point(px as f64 + 0.5, py as f64 + 0.5, h, w);
            let (gx, gy) = (mp.1 as f64 + 0.5, mp.0 as f64 + 0.5);
            assert!((gx - ex).abs() <= 1.0 && (gy - ey).abs() <= 1.0, "{p:?}: peak ({gx},{gy}) vs ({ex},{ey})");
            checked += 1;
        }
        assert!(checked >= 100, "only {checked} transforms kept the delta in frame");
    }
}
