//! Dense real planes and multi-channel feature maps, 2-D DFTs, and the
//! label/window generators used by the correlation filters.
//!
//! Planes and spectra are stored in 64-bit floats; feature maps are stored
//! in 32-bit floats and widened whenever a channel enters a transform.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;
use std::sync::Arc;

pub use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// A row-major real plane, `index = y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("plane dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "plane {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "plane dimensions must be positive");
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut p = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                p.data[y * width + x] = f(x, y);
            }
        }
        p
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Position and value of the maximum; ties go to the lowest row-major index.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width, self.data[best])
    }

    pub fn dot(&self, other: &Plane) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Elementwise product with another plane of the same shape.
    pub fn hadamard(&self, other: &Plane) -> Plane {
        debug_assert!(self.same_shape(other));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Plane { width: self.width, height: self.height, data }
    }

    /// Circular shift: output(x, y) = input(x - dx, y - dy) (mod size).
    pub fn circshift(&self, dx: isize, dy: isize) -> Plane {
        let (w, h) = (self.width as isize, self.height as isize);
        Plane::from_fn(self.width, self.height, |x, y| {
            let sx = (x as isize - dx).rem_euclid(w) as usize;
            let sy = (y as isize - dy).rem_euclid(h) as usize;
            self.get(sx, sy)
        })
    }
}

/// Row-major channel-last tensor, `index = (y * width + x) * channels + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::shape("feature map dimensions must be positive"));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "feature map {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(width > 0 && height > 0 && channels > 0);
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    /// Builds a map from equally shaped planes, one per channel.
    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::shape("no channels"))?;
        let (w, h, c) = (first.width, first.height, planes.len());
        if planes.iter().any(|p| !p.same_shape(first)) {
            return Err(Error::shape("channel planes differ in size"));
        }
        let mut data = vec![0.0f32; w * h * c];
        for (k, p) in planes.iter().enumerate() {
            for (i, &v) in p.data.iter().enumerate() {
                data[i * c + k] = v as f32;
            }
        }
        Self::new(w, h, c, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + k]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, k: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + k] = v;
    }

    /// The feature vector at one spatial position.
    pub fn vector(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Channel `k` widened to a 64-bit plane.
    pub fn channel(&self, k: usize) -> Plane {
        let data = self.data.iter().skip(k).step_by(self.channels).map(|&v| v as f64).collect();
        Plane { width: self.width, height: self.height, data }
    }

    /// A map restricted to the listed channels, in list order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<FeatureMap> {
        if indices.is_empty() || indices.iter().any(|&k| k >= self.channels) {
            return Err(Error::shape("channel selection out of range"));
        }
        let n = self.width * self.height;
        let mut data = Vec::with_capacity(n * indices.len());
        for i in 0..n {
            let v = &self.data[i * self.channels..(i + 1) * self.channels];
            data.extend(indices.iter().map(|&k| v[k]));
        }
        FeatureMap::new(self.width, self.height, indices.len(), data)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// A complex plane in the same row-major layout as [`Plane`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPlane {
    width: usize,
    height: usize,
    data: Vec<Complex64>,
}

impl SpectrumPlane {
    pub fn new(width: usize, height: usize, data: Vec<Complex64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape("spectrum dimensions do not match data length"));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![Complex64::new(0.0, 0.0); width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &SpectrumPlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn from_real(p: &Plane) -> Self {
        let data = p.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self { width: p.width, height: p.height, data }
    }
}

struct Fft2Plan {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2Plan {
    fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    /// Unnormalized in-place 2-D transform.
    fn process(&self, data: &mut [Complex64], inverse: bool) {
        let (rows, cols) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        rows.process(data);
        if self.height > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); data.len()];
            for y in 0..self.height {
                for x in 0..self.width {
                    t[x * self.height + y] = data[y * self.width + x];
                }
            }
            cols.process(&mut t);
            for x in 0..self.width {
                for y in 0..self.height {
                    data[y * self.width + x] = t[x * self.height + y];
                }
            }
        }
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, usize), Rc<Fft2Plan>>> = RefCell::new(HashMap::new());
}

fn plan(width: usize, height: usize) -> Rc<Fft2Plan> {
    PLANS.with(|plans| {
        plans.borrow_mut().entry((width, height)).or_insert_with(|| Rc::new(Fft2Plan::new(width, height))).clone()
    })
}

/// Unnormalized forward 2-D DFT.
pub fn fft2(p: &Plane) -> SpectrumPlane {
    let mut s = SpectrumPlane::from_real(p);
    plan(p.width, p.height).process(&mut s.data, false);
    s
}

/// Unnormalized forward 2-D DFT of a complex plane.
pub fn fft2_complex(s: &SpectrumPlane) -> SpectrumPlane {
    let mut out = s.clone();
    let pl = plan(s.width, s.height);
    debug_assert!(pl.width == s.width && pl.height == s.height);
    pl.process(&mut out.data, false);
    out
}

/// Normalized inverse 2-D DFT keeping the complex result.
pub fn ifft2_complex(s: &SpectrumPlane) -> SpectrumPlane {
    let mut out = s.clone();
    plan(s.width, s.height).process(&mut out.data, true);
    let scale = 1.0 / (s.width * s.height) as f64;
    out.data.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Normalized inverse 2-D DFT of a conjugate-symmetric spectrum.
///
/// The imaginary part is discarded after checking that it stays below
/// `1e-5 * max(max |re|, 1)`.
pub fn ifft2(s: &SpectrumPlane) -> Result<Plane> {
    let c = ifft2_complex(s);
    let mut max_re = 0.0f64;
    let mut max_im = 0.0f64;
    for v in &c.data {
        max_re = max_re.max(v.re.abs());
        max_im = max_im.max(v.im.abs());
    }
    let bound = 1e-5 * max_re.max(1.0);
    if max_im >= bound {
        return Err(Error::ImaginaryResidue { residue: max_im, bound });
    }
    let data = c.data.iter().map(|v| v.re).collect();
    Ok(Plane { width: s.width, height: s.height, data })
}

/// Square Gaussian label with its unit peak at `(floor(S/2), floor(S/2))`.
pub fn gaussian_label(size: usize, sigma: f64) -> Plane {
    let c = (size / 2) as f64;
    gaussian_at(size, size, c, c, sigma)
}

/// Non-periodic Gaussian of unit peak centered at `(cx, cy)`.
pub fn gaussian_at(width: usize, height: usize, cx: f64, cy: f64, sigma: f64) -> Plane {
    let denom = 2.0 * sigma * sigma;
    let gx: Vec<f64> = (0..width).map(|x| (-(x as f64 - cx).powi(2) / denom).exp()).collect();
    let gy: Vec<f64> = (0..height).map(|y| (-(y as f64 - cy).powi(2) / denom).exp()).collect();
    Plane::from_fn(width, height, |x, y| gx[x] * gy[y])
}

/// 1-D Hann vector `0.5 * (1 - cos(2 pi i / (S - 1)))`.
pub fn hann(size: usize) -> Vec<f64> {
    assert!(size >= 2, "Hann window needs at least two taps");
    let n = (size - 1) as f64;
    (0..size).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n).cos())).collect()
}

/// Outer product of two Hann vectors.
pub fn cosine_window(size: usize) -> Plane {
    let h = hann(size);
    Plane::from_fn(size, size, |x, y| h[x] * h[y])
}
