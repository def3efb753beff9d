//! Frames, ROI extraction and augmentation, feature sources, and the FMAP
//! tensor file format.

mod builtin;
mod fmap;
mod image;
mod roi;

use std::sync::RwLock;

pub use builtin::{builtin_features, BuiltinFeatureConfig, BuiltinFeatures, ORIENTATION_BINS};
pub use fmap::{load_fmap, read_fmap, save_fmap, write_fmap, FMAP_HEADER_LEN, FMAP_MAGIC, FMAP_VERSION};
pub use image::{BoundingBox, ImageFrame};
pub use roi::{
    augment_initial, extract_roi, flip_horizontal, flip_vertical, gaussian_blur, gaussian_kernel, resample_box,
    roi_box, PatchTransform, RoiPatch, AUGMENT_BLUR_VARIANCES,
};

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

/// Maps ROI patches to feature maps of a fixed `(S, S, c1)` shape.
pub trait FeatureSource: Send + Sync {
    /// Side length of the ROI patches this source consumes.
    fn input_size(&self) -> usize;
    /// Spatial side `S` of the produced maps.
    fn feature_size(&self) -> usize;
    /// Channel count `c1` of the produced maps.
    fn channels(&self) -> usize;
    fn extract(&self, patch: &RoiPatch) -> Result<FeatureMap>;
}

struct FrameFeatures {
    map: FeatureMap,
    frame_width: usize,
    frame_height: usize,
}

/// Feature source backed by externally computed whole-frame feature maps.
///
/// The map of the current frame is set with [`PrecomputedFeatures::set_frame`];
/// each patch is cropped from it using the patch's `source_box` and the
/// patch transform is replayed in feature space.
pub struct PrecomputedFeatures {
    input_size: usize,
    feature_size: usize,
    channels: usize,
    current: RwLock<Option<FrameFeatures>>,
}

impl PrecomputedFeatures {
    pub fn new(input_size: usize, feature_size: usize, channels: usize) -> Self {
        Self { input_size, feature_size, channels, current: RwLock::new(None) }
    }

    pub fn set_frame(&self, map: FeatureMap, frame_width: usize, frame_height: usize) -> Result<()> {
        if map.channels() != self.channels {
            return Err(Error::shape(format!(
                "frame features have {} channels, expected {}",
                map.channels(),
                self.channels
            )));
        }
        *self.current.write().expect("lock poisoned") = Some(FrameFeatures { map, frame_width, frame_height });
        Ok(())
    }
}

impl FeatureSource for PrecomputedFeatures {
    fn input_size(&self) -> usize {
        self.input_size
    }

    fn feature_size(&self) -> usize {
        self.feature_size
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn extract(&self, patch: &RoiPatch) -> Result<FeatureMap> {
        let guard = self.current.read().expect("lock poisoned");
        let cur = guard.as_ref().ok_or_else(|| Error::config("no precomputed frame features set"))?;
        let (mw, mh, c) = cur.map.shape();
        let sx = mw as f64 / cur.frame_width as f64;
        let sy = mh as f64 / cur.frame_height as f64;
        let b = patch.source_box;
        let s = self.feature_size;
        let step_x = b.w * sx / s as f64;
        let step_y = b.h * sy / s as f64;
        let tap = |pos: f64, len: usize| {
            let p = pos.clamp(0.0, (len - 1) as f64);
            let i0 = p.floor();
            let i1 = (i0 + 1.0).min((len - 1) as f64);
            (i0 as usize, i1 as usize, p - i0)
        };
        let mut data = vec![0.0f64; s * s * c];
        for v in 0..s {
            let (y0, y1, ty) = tap(b.y * sy + (v as f64 + 0.5) * step_y - 0.5, mh);
            for u in 0..s {
                let (x0, x1, tx) = tap(b.x * sx + (u as f64 + 0.5) * step_x - 0.5, mw);
                let out = &mut data[(v * s + u) * c..(v * s + u + 1) * c];
                for (k, o) in out.iter_mut().enumerate() {
                    let p00 = cur.map.get(x0, y0, k) as f64;
                    let p01 = cur.map.get(x1, y0, k) as f64;
                    let p10 = cur.map.get(x0, y1, k) as f64;
                    let p11 = cur.map.get(x1, y1, k) as f64;
                    let top = p00 + (p01 - p00) * tx;
                    let bot = p10 + (p11 - p10) * tx;
                    *o = top + (bot - top) * ty;
                }
            }
        }
        let data = match patch.transform {
            PatchTransform::Identity => data,
            PatchTransform::Blur(var) => {
                let cell = self.input_size as f64 / s as f64;
                let kernel = gaussian_kernel(var / (cell * cell));
                roi::separable_filter(&data, s, s, c, &kernel)
            }
            PatchTransform::FlipHorizontal => mirror(&data, s, c, true),
            PatchTransform::FlipVertical => mirror(&data, s, c, false),
        };
        FeatureMap::new(s, s, c, data.into_iter().map(|v| v as f32).collect())
    }
}

fn mirror(data: &[f64], s: usize, c: usize, horizontal: bool) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..s {
        for x in 0..s {
            let (sx, sy) = if horizontal { (s - 1 - x, y) } else { (x, s - 1 - y) };
            out[(y * s + x) * c..(y * s + x + 1) * c].copy_from_slice(&data[(sy * s + sx) * c..(sy * s + sx + 1) * c]);
        }
    }
    out
}
