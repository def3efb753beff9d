//! Procedural test sequences: a textured target moving over a textured
//! background, optionally zooming or hidden behind an occluder.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::{gaussian_blur, BoundingBox, ImageFrame};

/// Seeded smooth RGB noise.
#[derive(Debug, Clone)]
pub struct Texture {
    image: ImageFrame,
}

impl Texture {
    /// `side x side` uniform noise blurred with the given variance, then
    /// stretched to the range `[lo, hi]`.
    pub fn new(side: usize, blur_variance: f64, lo: u8, hi: u8, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..side * side * 3).map(|_| rng.random_range(0..=255u8)).collect();
        let raw = ImageFrame::new(side, side, 3, data).expect("sized by construction");
        let mut image = gaussian_blur(&raw, blur_variance);
        let (mn, mx) = image.data().iter().fold((255u8, 0u8), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (mx.saturating_sub(mn)).max(1) as f64;
        for v in image.data_mut() {
            *v = (lo as f64 + (*v - mn) as f64 / span * (hi - lo) as f64).round() as u8;
        }
        Self { image }
    }

    /// Bilinear sample at continuous texture coordinates in `[0, 1]^2`.
    pub fn sample(&self, u: f64, v: f64, c: usize) -> f64 {
        let side = self.image.width();
        let x = (u * side as f64 - 0.5).clamp(0.0, (side - 1) as f64);
        let y = (v * side as f64 - 0.5).clamp(0.0, (side - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(side - 1), (y0 + 1).min(side - 1));
        let (tx, ty) = (x - x0 as f64, y - y0 as f64);
        let p = |xx: usize, yy: usize| self.image.get(xx, yy, c) as f64;
        let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
        let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Frames and ground-truth boxes (0-based pixel coordinates).
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub name: String,
    pub frames: Vec<ImageFrame>,
    pub boxes: Vec<BoundingBox>,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Writes `img/0001.png ..` and a 1-based comma-separated
    /// `groundtruth_rect.txt` under `dir`.
    pub fn write_otb(&self, dir: &Path) -> Result<()> {
        let img = dir.join("img");
        fs::create_dir_all(&img)?;
        let mut gt = String::new();
        for (i, (f, b)) in self.frames.iter().zip(&self.boxes).enumerate() {
            f.save(&img.join(format!("{:04}.png", i + 1)))?;
            gt.push_str(&format!("{},{},{},{}\n", b.x + 1.0, b.y + 1.0, b.w, b.h));
        }
        fs::write(dir.join("groundtruth_rect.txt"), gt)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { width: 320, height: 240, frames: 100, seed: 7 }
    }
}

struct Scene {
    background: Texture,
    target: Texture,
    occluder: Texture,
    width: usize,
    height: usize,
}

impl Scene {
    fn new(cfg: &SceneConfig) -> Self {
        Self {
            background: Texture::new(96, 4.0, 40, 140, cfg.seed),
            target: Texture::new(24, 1.0, 0, 255, cfg.seed ^ 0x7a),
            occluder: Texture::new(48, 9.0, 90, 170, cfg.seed ^ 0x0c),
            width: cfg.width,
            height: cfg.height,
        }
    }

    fn render(&self, target: &BoundingBox, occluder: Option<&BoundingBox>) -> ImageFrame {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = |b: &BoundingBox| {
                    let u = (px - b.x) / b.w;
                    let v = (py - b.y) / b.h;
                    ((0.0..1.0).contains(&u) && (0.0..1.0).contains(&v)).then_some((u, v))
                };
                let hit = occluder
                    .and_then(|o| inside(o).map(|(u, v)| (&self.occluder, u, v)))
                    .or_else(|| inside(target).map(|(u, v)| (&self.target, u, v)));
                let (tex, u, v) = hit.unwrap_or((&self.background, px / w as f64, py / h as f64));
                for c in 0..3 {
                    data[(y * w + x) * 3 + c] = tex.sample(u, v, c).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        ImageFrame::new(w, h, 3, data).expect("sized by construction")
    }
}

/// A `side x side` target moving with constant velocity `(vx, vy)` px/frame.
pub fn translating(cfg: &SceneConfig, side: f64, start: (f64, f64), velocity: (f64, f64)) -> SyntheticSequence {
    let scene = Scene::new(cfg);
    let boxes: Vec<BoundingBox> = (0..cfg.frames)
        .map(|t| BoundingBox::new(start.0 + velocity.0 * t as f64, start.1 + velocity.1 * t as f64, side, side))
        .collect();
    let frames = boxes.iter().map(|b| scene.render(b, None)).collect();
    SyntheticSequence { name: "translate".into(), frames, boxes }
}

/// A target centered at `center` whose side grows by `rate` per frame.
pub fn zoom(cfg: &SceneConfig, side: f64, center: (f64, f64), rate: f64) -> SyntheticSequence {
    let scene = Scene::new(cfg);
    let boxes: Vec<BoundingBox> = (0..cfg.frames)
        .map(|t| {
            let s = side * rate.powi(t as i32);
            BoundingBox::from_center(center.0, center.1, s, s)
        })
        .collect();
    let frames = boxes.iter().map(|b| scene.render(b, None)).collect();
    SyntheticSequence { name: "zoom".into(), frames, boxes }
}

/// A static target fully covered by an occluder during `hidden` frames.
pub fn occlusion(cfg: &SceneConfig, side: f64, start: (f64, f64), hidden: std::ops::Range<usize>) -> SyntheticSequence {
    let scene = Scene::new(cfg);
    let target = BoundingBox::new(start.0, start.1, side, side);
    let cover = target.scaled(1.6);
    let boxes = vec![target; cfg.frames];
    let frames = (0..cfg.frames).map(|t| scene.render(&target, hidden.contains(&t).then_some(&cover))).collect();
    SyntheticSequence { name: "occlusion".into(), frames, boxes }
}
