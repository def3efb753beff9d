//! Brute-force oracles and seeded fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::time::Instant;

use ctxtrack::adapt::{adaptation_grad, adaptation_loss, AdaptationConfig};
use ctxtrack::autoencoder::{backward, multistage_loss, pretrain_base, AutoEncoderModel, TrainConfig};
use ctxtrack::features::{extract_roi, BoundingBox, BuiltinFeatureConfig, BuiltinFeatures, FeatureSource};
use ctxtrack::numerics::{Complex64, FeatureMap, Plane, SpectrumPlane};
use ctxtrack::synthetic::{translating, SceneConfig, SyntheticSequence};
use ctxtrack::tracker::{init, FrameResult, TrackerConfig, TrackerModels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Plane {
    Plane::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> FeatureMap {
    let data = (0..w * h * c).map(|_| rng.random_range(0.0..1.0f32)).collect();
    FeatureMap::new(w, h, c, data).unwrap()
}

/// Double-loop forward DFT, `X[u, v] = sum x[x, y] exp(-2 pi i (ux/w + vy/h))`.
pub fn dft2(data: &[Complex64], w: usize, h: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = vec![Complex64::new(0.0, 0.0); w * h];
    for v in 0..h {
        for u in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = sign * 2.0 * PI * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                    acc += data[y * w + x] * Complex64::from_polar(1.0, phase);
                }
            }
            out[v * w + u] = if inverse { acc / (w * h) as f64 } else { acc };
        }
    }
    out
}

pub fn dft2_real(p: &Plane) -> Vec<Complex64> {
    let data: Vec<Complex64> = p.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dft2(&data, p.width(), p.height(), false)
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Spectrum of a random real plane, hence conjugate-symmetric.
pub fn random_symmetric_spectrum(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SpectrumPlane {
    let p = random_plane(rng, w, h);
    SpectrumPlane::new(w, h, dft2_real(&p)).unwrap()
}

/// `r[t] = sum_x w[x + t] z[x]` with circular indexing.
pub fn circular_correlation(w: &Plane, z: &Plane) -> Plane {
    let (sw, sh) = (w.width(), w.height());
    Plane::from_fn(sw, sh, |tx, ty| {
        let mut acc = 0.0;
        for y in 0..sh {
            for x in 0..sw {
                acc += w.get((x + tx) % sw, (y + ty) % sh) * z.get(x, y);
            }
        }
        acc
    })
}

/// Model with weights large enough that most ReLUs are active.
pub fn lively(c1: usize, depth: usize, seed: u64) -> AutoEncoderModel {
    let mut rng = rng(seed);
    let mut m = AutoEncoderModel::new(c1, depth, &mut rng).unwrap();
    for layer in m.layers_mut() {
        layer.kernel.iter_mut().for_each(|w| *w *= 40.0);
        layer.bias.iter_mut().for_each(|b| *b = 0.05);
    }
    m
}

fn perturbed_loss(
    m: &AutoEncoderModel,
    layer: usize,
    p: usize,
    delta: f64,
    loss: &dyn Fn(&AutoEncoderModel) -> f64,
) -> f64 {
    let mut c = m.clone();
    let l = c.layers_mut().nth(layer).unwrap();
    if p < l.kernel.len() {
        l.kernel[p] += delta;
    } else {
        l.bias[p - l.kernel.len()] += delta;
    }
    loss(&c)
}

/// Central differences over every parameter, in checkpoint order.
pub fn finite_differences(m: &AutoEncoderModel, h: f64, loss: &dyn Fn(&AutoEncoderModel) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.param_count());
    for l in 0..2 * m.depth() {
        let n = m.layers().nth(l).unwrap().param_count();
        for p in 0..n {
            let up = perturbed_loss(m, l, p, h, loss);
            let down = perturbed_loss(m, l, p, -h, loss);
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// Largest per-entry relative error; entries far below the gradient scale
/// are compared against that scale instead of their own magnitude.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Auto-encoder backward pass against central differences on a
/// `4 x 4 x 4` input with two layers.
pub fn ae_gradient_error(seed: u64) -> (usize, f64) {
    let mut r = rng(seed);
    let m = lively(4, 2, seed + 100);
    let clean: Vec<FeatureMap> = (0..2).map(|_| random_map(&mut r, 4, 4, 4)).collect();
    let noisy: Vec<FeatureMap> = (0..2).map(|_| random_map(&mut r, 4, 4, 4)).collect();
    let (_, g) = backward(&m, &clean, &noisy).unwrap();
    let fd = finite_differences(&m, 1e-4, &|c| multistage_loss(c, &clean, &noisy).unwrap());
    (m.param_count(), max_relative_error(&g.flatten(), &fd))
}

/// Adaptation gradient against central differences on a one-layer model.
pub fn adaptation_gradient_error(seed: u64) -> (usize, f64) {
    let mut r = rng(seed);
    let m = lively(4, 1, seed + 200);
    let xs: Vec<FeatureMap> = (0..2).map(|_| random_map(&mut r, 5, 4, 4)).collect();
    let y = ctxtrack::numerics::gaussian_at(5, 4, 2.0, 2.0, 0.9);
    let cfg = AdaptationConfig { lambda_theta: 10.0, cf_lambda: 0.5, ..Default::default() };
    let (_, g) = adaptation_grad(&m, &xs, &y, &cfg).unwrap();
    let fd = finite_differences(&m, 1e-5, &|c| adaptation_loss(c, &xs, &y, &cfg).unwrap().total);
    (m.param_count(), max_relative_error(&g.flatten(), &fd))
}

/// Built-in features at `S = 32` with 50 channels, and a one-layer base
/// model (25 compressed channels) pretrained on ROIs of the translation
/// scene.
pub struct TrackingFixture {
    pub features: BuiltinFeatures,
    pub models: TrackerModels,
}

pub fn translation_sequence() -> SyntheticSequence {
    translating(&SceneConfig::default(), 40.0, (60.0, 60.0), (1.5, 0.7))
}

pub fn tracking_fixture() -> TrackingFixture {
    let cfg = BuiltinFeatureConfig { input_size: 64, cell_size: 2, channels: 50, ..Default::default() };
    let features = BuiltinFeatures::new(cfg).unwrap();
    let seq = translation_sequence();
    let mut samples = Vec::new();
    for (i, f) in seq.frames.iter().enumerate().step_by(5) {
        for dx in [-20.0, 0.0, 20.0] {
            let b = seq.boxes[i];
            let shifted = BoundingBox::new(b.x + dx, b.y, b.w, b.h);
            samples.push(features.extract(&extract_roi(f, &shifted, 2.5, 64).unwrap()).unwrap());
        }
    }
    let train = TrainConfig { depth: 1, epochs: 10, learning_rate: 1e-4, ..Default::default() };
    let base = pretrain_base(&samples, &train).unwrap().model;
    TrackingFixture { features, models: TrackerModels::single(base) }
}

pub struct TrackRun {
    pub results: Vec<FrameResult>,
    /// Center error per frame, including the initial frame.
    pub errors: Vec<f64>,
    /// Steps per second, excluding initialization.
    pub fps: f64,
    pub kept_channels: usize,
}

pub fn track(fx: &TrackingFixture, seq: &SyntheticSequence, cfg: &TrackerConfig) -> TrackRun {
    let (mut st, first) = init(&seq.frames[0], &seq.boxes[0], &fx.models, &fx.features, cfg).unwrap();
    let kept_channels = st.kept.kept_indices.len();
    let mut results = vec![first];
    let t = Instant::now();
    for f in &seq.frames[1..] {
        results.push(st.step(f, &fx.features).unwrap());
    }
    let fps = (seq.len() - 1) as f64 / t.elapsed().as_secs_f64();
    let errors = results.iter().zip(&seq.boxes).map(|(r, g)| ctxtrack::bench::center_error(&r.bbox, g)).collect();
    TrackRun { results, errors, fps, kept_channels }
}
