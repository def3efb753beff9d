use crate::error::{Error, Result};

use super::image::{BoundingBox, ImageFrame};

/// How an ROI patch was derived from the raw crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatchTransform {
    Identity,
    /// Gaussian blur with the given variance (pixels squared).
    Blur(f64),
    /// Mirror left-right (flip around the vertical axis).
    FlipHorizontal,
    /// Mirror top-bottom (flip around the horizontal axis).
    FlipVertical,
}

/// A square, resampled, always 3-channel crop of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPatch {
    pub image: ImageFrame,
    /// The cropped rectangle in frame coordinates.
    pub source_box: BoundingBox,
    pub transform: PatchTransform,
}

impl RoiPatch {
    pub fn side(&self) -> usize {
        self.image.width()
    }
}

/// Blur variances of the initial-frame augmentation.
pub const AUGMENT_BLUR_VARIANCES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// The ROI rectangle for a target: same center, extent scaled by `factor`.
pub fn roi_box(target: &BoundingBox, factor: f64) -> Result<BoundingBox> {
    if !(factor > 0.0) || !target.is_valid() {
        return Err(Error::DegenerateBox(format!("target {target:?}, factor {factor}")));
    }
    let roi = target.scaled(factor);
    if roi.w < 1.0 || roi.h < 1.0 {
        return Err(Error::DegenerateBox(format!("ROI {:.3}x{:.3} is below one pixel", roi.w, roi.h)));
    }
    Ok(roi)
}

/// Crops an ROI of `factor` times the target extent, resampled to `out_size` square.
pub fn extract_roi(frame: &ImageFrame, target: &BoundingBox, factor: f64, out_size: usize) -> Result<RoiPatch> {
    let roi = roi_box(target, factor)?;
    resample_box(frame, &roi, out_size)
}

/// Bilinear resampling of an arbitrary frame rectangle onto an `out_size` square.
///
/// Samples outside the frame replicate the nearest border pixel.
pub fn resample_box(frame: &ImageFrame, roi: &BoundingBox, out_size: usize) -> Result<RoiPatch> {
    if out_size == 0 {
        return Err(Error::config("ROI output size must be positive"));
    }
    if roi.w < 1.0 || roi.h < 1.0 || !roi.is_valid() {
        return Err(Error::DegenerateBox(format!("ROI {roi:?}")));
    }
    let (fw, fh, fc) = (frame.width(), frame.height(), frame.channels());
    let sx = roi.w / out_size as f64;
    let sy = roi.h / out_size as f64;

    // Horizontal taps are shared by every output row.
    let taps_x: Vec<(usize, usize, f64)> =
        (0..out_size).map(|u| axis_tap(roi.x + (u as f64 + 0.5) * sx - 0.5, fw)).collect();

    let src = frame.data();
    let mut out = vec![0u8; out_size * out_size * 3];
    for v in 0..out_size {
        let (y0, y1, ty) = axis_tap(roi.y + (v as f64 + 0.5) * sy - 0.5, fh);
        for (u, &(x0, x1, tx)) in taps_x.iter().enumerate() {
            let o = (v * out_size + u) * 3;
            for c in 0..3 {
                let ch = if fc == 3 { c } else { 0 };
                let p00 = src[(y0 * fw + x0) * fc + ch] as f64;
                let p01 = src[(y0 * fw + x1) * fc + ch] as f64;
                let p10 = src[(y1 * fw + x0) * fc + ch] as f64;
                let p11 = src[(y1 * fw + x1) * fc + ch] as f64;
                let top = p00 + (p01 - p00) * tx;
                let bottom = p10 + (p11 - p10) * tx;
                out[o + c] = (top + (bottom - top) * ty).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(RoiPatch {
        image: ImageFrame::new(out_size, out_size, 3, out)?,
        source_box: *roi,
        transform: PatchTransform::Identity,
    })
}

fn axis_tap(pos: f64, len: usize) -> (usize, usize, f64) {
    let max = (len - 1) as f64;
    let p = pos.clamp(0.0, max);
    let i0 = p.floor();
    let i1 = (i0 + 1.0).min(max);
    (i0 as usize, i1 as usize, p - i0)
}

/// The seven adaptation samples: original, four blurs, two mirrors.
pub fn augment_initial(patch: &RoiPatch) -> Vec<RoiPatch> {
    let mut out = Vec::with_capacity(7);
    out.push(RoiPatch { transform: PatchTransform::Identity, ..patch.clone() });
    for var in AUGMENT_BLUR_VARIANCES {
        out.push(RoiPatch {
            image: gaussian_blur(&patch.image, var),
            source_box: patch.source_box,
            transform: PatchTransform::Blur(var),
        });
    }
    out.push(RoiPatch {
        image: flip_horizontal(&patch.image),
        source_box: patch.source_box,
        transform: PatchTransform::FlipHorizontal,
    });
    out.push(RoiPatch {
        image: flip_vertical(&patch.image),
        source_box: patch.source_box,
        transform: PatchTransform::FlipVertical,
    });
    out
}

/// Normalized Gaussian taps truncated at radius `ceil(3 sigma)`.
pub fn gaussian_kernel(variance: f64) -> Vec<f64> {
    let sigma = variance.sqrt();
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * variance)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Runs a separable filter over `w x h` interleaved `c`-channel f64 data with
/// replicate borders.
pub(crate) fn separable_filter(data: &[f64], w: usize, h: usize, c: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in kernel.iter().enumerate() {
                    let sx = clamp(x as isize + t as isize - r, w);
                    acc += kv * data[(y * w + sx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in kernel.iter().enumerate() {
                    let sy = clamp(y as isize + t as isize - r, h);
                    acc += kv * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &ImageFrame, variance: f64) -> ImageFrame {
    let kernel = gaussian_kernel(variance);
    let data: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let blurred = separable_filter(&data, img.width(), img.height(), img.channels(), &kernel);
    let bytes = blurred.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    ImageFrame::new(img.width(), img.height(), img.channels(), bytes).expect("same shape")
}

pub fn flip_horizontal(img: &ImageFrame) -> ImageFrame {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = vec![0u8; w * h * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y * w + x) * c + ch] = img.get(w - 1 - x, y, ch);
            }
        }
    }
    ImageFrame::new(w, h, c, out).expect("same shape")
}

pub fn flip_vertical(img: &ImageFrame) -> ImageFrame {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let row = w * c;
    let mut out = Vec::with_capacity(w * h * c);
    for y in (0..h).rev() {
        out.extend_from_slice(&img.data()[y * row..(y + 1) * row]);
    }
    ImageFrame::new(w, h, c, out).expect("same shape")
}
