//! 3x3 same-padded convolutions via im2col and dense matrix products.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::FeatureMap;

pub const KERNEL_SIDE: usize = 3;
const TAPS: usize = KERNEL_SIDE * KERNEL_SIDE;

/// A channel-last f64 tensor used for activations and their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Activation {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn from_map(m: &FeatureMap) -> Self {
        Self { width: m.width(), height: m.height(), channels: m.channels(), data: m.to_f64() }
    }

    pub fn to_map(&self) -> FeatureMap {
        let data = self.data.iter().map(|&v| v as f32).collect();
        FeatureMap::new(self.width, self.height, self.channels, data).expect("consistent shape")
    }

    pub fn positions(&self) -> usize {
        self.width * self.height
    }

    /// Channel `k` as a row-major vector.
    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.data.iter().skip(k).step_by(self.channels).copied().collect()
    }

    pub fn add_channel(&mut self, k: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self.data[i * self.channels + k] += v;
        }
    }

    pub fn add_assign(&mut self, other: &Activation) {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// One 3x3 convolution with bias and optional ReLU.
///
/// Kernel layout is `(3, 3, c_in, c_out)` row-major:
/// `kernel[((ky * 3 + kx) * c_in + i) * c_out + o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub relu: bool,
}

/// Cached intermediates of one forward application, used by the backward pass.
#[derive(Debug, Clone)]
pub struct ConvTrace {
    cols: Vec<f64>,
    pub output: Activation,
}

impl ConvLayer {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self { c_in, c_out, kernel: vec![0.0; TAPS * c_in * c_out], bias: vec![0.0; c_out], relu: true }
    }

    pub fn random<R: Rng + ?Sized>(c_in: usize, c_out: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut layer = Self::zeros(c_in, c_out);
        layer.kernel.iter_mut().for_each(|w| *w = normal.sample(rng));
        layer
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    #[inline]
    pub fn weight(&self, ky: usize, kx: usize, i: usize, o: usize) -> f64 {
        self.kernel[((ky * KERNEL_SIDE + kx) * self.c_in + i) * self.c_out + o]
    }

    fn im2col(&self, input: &Activation) -> Vec<f64> {
        im2col(&input.data, input.width, input.height, input.channels)
    }

    fn col2im(&self, dcols: &[f64], w: usize, h: usize) -> Activation {
        let c = self.c_in;
        let row = TAPS * c;
        let mut out = Activation::zeros(w, h, c);
        for y in 0..h {
            for x in 0..w {
                let src = &dcols[(y * w + x) * row..(y * w + x + 1) * row];
                for ky in 0..KERNEL_SIDE {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL_SIDE {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = (sy as usize * w + sx as usize) * c;
                        let t = (ky * KERNEL_SIDE + kx) * c;
                        for i in 0..c {
                            out.data[dst + i] += src[t + i];
                        }
                    }
                }
            }
        }
        out
    }

    fn apply_cols(&self, cols: &[f64], positions: usize) -> Vec<f64> {
        let k = TAPS * self.c_in;
        let n = self.c_out;
        let mut out = Vec::with_capacity(positions * n);
        for _ in 0..positions {
            out.extend_from_slice(&self.bias);
        }
        // SAFETY: slices are sized m*k, k*n and m*n with the row-major strides given.
        unsafe {
            matrixmultiply::dgemm(
                positions,
                k,
                n,
                1.0,
                cols.as_ptr(),
                k as isize,
                1,
                self.kernel.as_ptr(),
                n as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        if self.relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        out
    }

    /// Single-precision forward pass for inference, optionally restricted to
    /// a subset of output channels (in the given order).
    pub fn infer(&self, input: &FeatureMap, keep: Option<&[usize]>) -> FeatureMap {
        let (w, h, c) = input.shape();
        assert_eq!(c, self.c_in, "conv input channel mismatch");
        let all: Vec<usize>;
        let keep = match keep {
            Some(k) => k,
            None => {
                all = (0..self.c_out).collect();
                &all
            }
        };
        let k = TAPS * c;
        let n = keep.len();
        let mut kernel = vec![0.0f32; k * n];
        for r in 0..k {
            for (j, &o) in keep.iter().enumerate() {
                kernel[r * n + j] = self.kernel[r * self.c_out + o] as f32;
            }
        }
        let cols = im2col(input.data(), w, h, c);
        let positions = w * h;
        let mut out = Vec::with_capacity(positions * n);
        let bias: Vec<f32> = keep.iter().map(|&o| self.bias[o] as f32).collect();
        for _ in 0..positions {
            out.extend_from_slice(&bias);
        }
        // SAFETY: slices are sized m*k, k*n and m*n with the row-major strides given.
        unsafe {
            matrixmultiply::sgemm(
                positions,
                k,
                n,
                1.0,
                cols.as_ptr(),
                k as isize,
                1,
                kernel.as_ptr(),
                n as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        if self.relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        FeatureMap::new(w, h, n, out).expect("sized by construction")
    }

    pub fn forward(&self, input: &Activation) -> Activation {
        self.trace(input).output
    }

    pub fn trace(&self, input: &Activation) -> ConvTrace {
        assert_eq!(input.channels, self.c_in, "conv input channel mismatch");
        let cols = self.im2col(input);
        let data = self.apply_cols(&cols, input.positions());
        let output = Activation { width: input.width, height: input.height, channels: self.c_out, data };
        ConvTrace { cols, output }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the post-activation output).
    ///
    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// w.r.t. the layer input when `need_input` is set.
    pub fn backward(
        &self,
        trace: &ConvTrace,
        d_out: &Activation,
        grad: &mut LayerGrad,
        need_input: bool,
    ) -> Option<Activation> {
        let positions = d_out.positions();
        let k = TAPS * self.c_in;
        let n = self.c_out;
        let mut d_pre = d_out.data.clone();
        if self.relu {
            for (g, o) in d_pre.iter_mut().zip(&trace.output.data) {
                if *o <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        for p in 0..positions {
            for (b, g) in grad.bias.iter_mut().zip(&d_pre[p * n..(p + 1) * n]) {
                *b += g;
            }
        }
        // SAFETY: cols is positions x k (read transposed), d_pre positions x n, kernel k x n.
        unsafe {
            matrixmultiply::dgemm(
                k,
                positions,
                n,
                1.0,
                trace.cols.as_ptr(),
                1,
                k as isize,
                d_pre.as_ptr(),
                n as isize,
                1,
                1.0,
                grad.kernel.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        if !need_input {
            return None;
        }
        let mut dcols = vec![0.0; positions * k];
        // SAFETY: d_pre positions x n, kernel read transposed as n x k, dcols positions x k.
        unsafe {
            matrixmultiply::dgemm(
                positions,
                n,
                k,
                1.0,
                d_pre.as_ptr(),
                n as isize,
                1,
                self.kernel.as_ptr(),
                1,
                n as isize,
                0.0,
                dcols.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        Some(self.col2im(&dcols, d_out.width, d_out.height))
    }
}

/// Gradient of one layer's kernel and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &ConvLayer) -> Self {
        Self { kernel: vec![0.0; layer.kernel.len()], bias: vec![0.0; layer.bias.len()] }
    }
}

fn im2col<T: Copy + Default>(data: &[T], w: usize, h: usize, c: usize) -> Vec<T> {
    let row = TAPS * c;
    let mut cols = vec![T::default(); w * h * row];
    for y in 0..h {
        for x in 0..w {
            let dst = &mut cols[(y * w + x) * row..(y * w + x + 1) * row];
            for ky in 0..KERNEL_SIDE {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL_SIDE {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * c;
                    let t = (ky * KERNEL_SIDE + kx) * c;
                    dst[t..t + c].copy_from_slice(&data[src..src + c]);
                }
            }
        }
    }
    cols
}
