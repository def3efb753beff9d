//! Desk-scale stand-in for a deep backbone layer.
//!
//! Each `cell_size x cell_size` block of the ROI becomes one feature vector:
//! the mean gray level, an 8-bin unsigned gradient-orientation histogram, and
//! rectified random projections of the mean-removed block. All channels are
//! nonnegative, like post-ReLU convolutional activations.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

use super::roi::RoiPatch;
use super::FeatureSource;

pub const ORIENTATION_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinFeatureConfig {
    pub input_size: usize,
    pub cell_size: usize,
    pub channels: usize,
    pub seed: u64,
    /// Multiplier of the mean-intensity channel.
    pub intensity_gain: f64,
    /// Multiplier of the gradient and projection channels.
    pub texture_gain: f64,
}

impl Default for BuiltinFeatureConfig {
    fn default() -> Self {
        Self { input_size: 64, cell_size: 2, channels: 100, seed: 0x5eed_f00d, intensity_gain: 0.5, texture_gain: 16.0 }
    }
}

impl BuiltinFeatureConfig {
    pub fn feature_size(&self) -> Result<usize> {
        if self.cell_size == 0 || !self.input_size.is_multiple_of(self.cell_size) {
            return Err(Error::config(format!(
                "input size {} is not divisible by cell size {}",
                self.input_size, self.cell_size
            )));
        }
        Ok(self.input_size / self.cell_size)
    }
}

#[derive(Debug, Clone)]
pub struct BuiltinFeatures {
    cfg: BuiltinFeatureConfig,
    size: usize,
    /// Row-major (projection, pixel-in-cell).
    projections: Vec<f64>,
}

impl BuiltinFeatures {
    pub fn new(cfg: BuiltinFeatureConfig) -> Result<Self> {
        let size = cfg.feature_size()?;
        if cfg.channels < 1 + ORIENTATION_BINS {
            return Err(Error::config(format!("built-in features need at least {} channels", 1 + ORIENTATION_BINS)));
        }
        let n_proj = cfg.channels - 1 - ORIENTATION_BINS;
        let px = cfg.cell_size * cfg.cell_size;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = 1.0 / (px as f64).sqrt();
        let projections = (0..n_proj * px)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Ok(Self { cfg, size, projections })
    }

    pub fn config(&self) -> &BuiltinFeatureConfig {
        &self.cfg
    }
}

/// Convenience wrapper around [`BuiltinFeatures::extract`].
pub fn builtin_features(patch: &RoiPatch, cfg: &BuiltinFeatureConfig) -> Result<FeatureMap> {
    BuiltinFeatures::new(cfg.clone())?.extract(patch)
}

impl FeatureSource for BuiltinFeatures {
    fn input_size(&self) -> usize {
        self.cfg.input_size
    }

    fn feature_size(&self) -> usize {
        self.size
    }

    fn channels(&self) -> usize {
        self.cfg.channels
    }

    fn extract(&self, patch: &RoiPatch) -> Result<FeatureMap> {
        let side = self.cfg.input_size;
        if patch.image.width() != side || patch.image.height() != side {
            return Err(Error::shape(format!(
                "patch is {}x{}, extractor expects {side}x{side}",
                patch.image.width(),
                patch.image.height()
            )));
        }
        let gray = patch.image.gray();
        let cell = self.cfg.cell_size;
        let px = cell * cell;
        let c = self.cfg.channels;
        let n_proj = c - 1 - ORIENTATION_BINS;
        let (ig, tg) = (self.cfg.intensity_gain, self.cfg.texture_gain);

        // Per-pixel gradient magnitude and orientation bin.
        let at = |x: usize, y: usize| gray[y * side + x];
        let mut mag = vec![0.0; side * side];
        let mut bin = vec![0usize; side * side];
        for y in 0..side {
            for x in 0..side {
                let gx = at((x + 1).min(side - 1), y) - at(x.saturating_sub(1), y);
                let gy = at(x, (y + 1).min(side - 1)) - at(x, y.saturating_sub(1));
                let m = 0.5 * (gx * gx + gy * gy).sqrt();
                if m > 0.0 {
                    let theta = gy.atan2(gx).rem_euclid(PI);
                    bin[y * side + x] = ((theta / PI * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1);
                }
                mag[y * side + x] = m;
            }
        }

        let s = self.size;
        let mut data = vec![0.0f32; s * s * c];
        let mut block = vec![0.0; px];
        for cy in 0..s {
            for cx in 0..s {
                let out = &mut data[(cy * s + cx) * c..(cy * s + cx + 1) * c];
                let mut hist = [0.0f64; ORIENTATION_BINS];
                for j in 0..cell {
                    for i in 0..cell {
                        let idx = (cy * cell + j) * side + cx * cell + i;
                        block[j * cell + i] = gray[idx];
                        hist[bin[idx]] += mag[idx];
                    }
                }
                let mean = block.iter().sum::<f64>() / px as f64;
                out[0] = (ig * mean) as f32;
                for (b, h) in hist.iter().enumerate() {
                    out[1 + b] = (tg * h / px as f64) as f32;
                }
                for p in 0..n_proj {
                    let w = &self.projections[p * px..(p + 1) * px];
                    let v: f64 = w.iter().zip(&block).map(|(a, g)| a * (g - mean)).sum();
                    out[1 + ORIENTATION_BINS + p] = (tg * v.max(0.0)) as f32;
                }
            }
        }
        FeatureMap::new(s, s, c, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::image::{BoundingBox, ImageFrame};
    use crate::features::roi::PatchTransform;

    fn patch(img: ImageFrame) -> RoiPatch {
        let side = img.width() as f64;
        RoiPatch { image: img, source_box: BoundingBox::new(0.0, 0.0, side, side), transform: PatchTransform::Identity }
    }

    fn textured(side: usize) -> ImageFrame {
        let data = (0..side * side * 3).map(|i| ((i * 37 + i / 7) % 256) as u8).collect();
        ImageFrame::new(side, side, 3, data).unwrap()
    }

    #[test]
    fn default_size_is_32() {
        let cfg = BuiltinFeatureConfig::default();
        assert_eq!(cfg.feature_size().unwrap(), 32);
        let f = BuiltinFeatures::new(cfg).unwrap();
        let m = f.extract(&patch(textured(64))).unwrap();
        assert_eq!(m.shape(), (32, 32, 100));
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let cfg = BuiltinFeatureConfig { input_size: 31, ..Default::default() };
        assert!(matches!(BuiltinFeatures::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn constant_patch_has_no_gradients() {
        let cfg = BuiltinFeatureConfig { input_size: 32, cell_size: 4, channels: 32, ..Default::default() };
        let m = builtin_features(&patch(ImageFrame::filled(32, 32, 3, 128)), &cfg).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert!((m.get(x, y, 0) - (cfg.intensity_gain * 128.0 / 255.0) as f32).abs() < 1e-5);
                for k in 1..32 {
                    assert_eq!(m.get(x, y, k), 0.0);
                }
            }
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let cfg = BuiltinFeatureConfig { input_size: 64, ..Default::default() };
        let p = patch(textured(64));
        let a = builtin_features(&p, &cfg).unwrap();
        let b = builtin_features(&p, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| *v >= 0.0 && v.is_finite()));
    }
}
