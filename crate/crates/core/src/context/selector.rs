//! Fully-connected context selector: descriptor -> 1024 ReLU -> softmax.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::cluster::Descriptor;

pub const SELECTOR_HIDDEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self { hidden: SELECTOR_HIDDEN, batch_size: 100, learning_rate: 0.01, epochs: 200, seed: 0 }
    }
}

/// Weights are row-major `(input, output)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorNetwork {
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradients with the same layout as [`SelectorNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl SelectorNetwork {
    pub fn zeros(dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            dim,
            hidden,
            classes,
            w1: vec![0.0; dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * classes],
            b2: vec![0.0; classes],
        }
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn random(dim: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::zeros(dim, hidden, classes);
        let n1 = Normal::new(0.0, (1.0 / dim.max(1) as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (1.0 / hidden.max(1) as f64).sqrt()).unwrap();
        net.w1.iter_mut().for_each(|w| *w = n1.sample(rng));
        net.w2.iter_mut().for_each(|w| *w = n2.sample(rng));
        net
    }

    fn hidden_layer(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                let row = &self.w1[i * self.hidden..(i + 1) * self.hidden];
                for (a, w) in h.iter_mut().zip(row) {
                    *a += xi * w;
                }
            }
        }
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        h
    }

    fn output_logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.b2.clone();
        for (j, &hj) in h.iter().enumerate() {
            if hj != 0.0 {
                let row = &self.w2[j * self.classes..(j + 1) * self.classes];
                for (a, w) in z.iter_mut().zip(row) {
                    *a += hj * w;
                }
            }
        }
        z
    }

    pub fn logits(&self, d: &Descriptor) -> Result<Vec<f64>> {
        if d.dim() != self.dim {
            return Err(Error::shape(format!("selector expects {} inputs, got {}", self.dim, d.dim())));
        }
        Ok(self.output_logits(&self.hidden_layer(d.as_slice())))
    }

    pub fn probabilities(&self, d: &Descriptor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(d)?))
    }

    fn apply(&mut self, g: &SelectorGrads, lr: f64) {
        for (p, d) in [(&mut self.w1, &g.w1), (&mut self.b1, &g.b1), (&mut self.w2, &g.w2), (&mut self.b2, &g.b2)] {
            p.iter_mut().zip(d).for_each(|(a, b)| *a -= lr * b);
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Most probable class (0-based, lowest index on ties) and the probabilities.
pub fn select(net: &SelectorNetwork, d: &Descriptor) -> Result<(usize, Vec<f64>)> {
    let p = net.probabilities(d)?;
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    Ok((best, p))
}

/// Mean cross-entropy over a batch and its gradient.
pub fn cross_entropy_grad(net: &SelectorNetwork, xs: &[&Descriptor], labels: &[usize]) -> Result<(f64, SelectorGrads)> {
    if xs.len() != labels.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: labels.len() });
    }
    let (hd, nc) = (net.hidden, net.classes);
    let mut g = SelectorGrads {
        w1: vec![0.0; net.w1.len()],
        b1: vec![0.0; hd],
        w2: vec![0.0; net.w2.len()],
        b2: vec![0.0; nc],
    };
    let scale = 1.0 / xs.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(labels) {
        if y >= nc {
            return Err(Error::IndexOutOfRange { index: y, max: nc - 1 });
        }
        if x.dim() != net.dim {
            return Err(Error::shape("descriptor length differs from selector input"));
        }
        let h = net.hidden_layer(x.as_slice());
        let p = softmax(&net.output_logits(&h));
        loss -= p[y].max(f64::MIN_POSITIVE).ln() * scale;
        let dz: Vec<f64> = (0..nc).map(|k| (p[k] - f64::from(k == y)) * scale).collect();
        let mut dh = vec![0.0; hd];
        for j in 0..hd {
            if h[j] <= 0.0 {
                continue;
            }
            let row = &net.w2[j * nc..(j + 1) * nc];
            let grow = &mut g.w2[j * nc..(j + 1) * nc];
            for k in 0..nc {
                grow[k] += h[j] * dz[k];
                dh[j] += row[k] * dz[k];
            }
        }
        for k in 0..nc {
            g.b2[k] += dz[k];
        }
        for (i, &xi) in x.as_slice().iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let grow = &mut g.w1[i * hd..(i + 1) * hd];
            for j in 0..hd {
                grow[j] += xi * dh[j];
            }
        }
        for j in 0..hd {
            g.b1[j] += dh[j];
        }
    }
    Ok((loss, g))
}

/// Mini-batch SGD on cross-entropy. Labels are 0-based cluster indices.
pub fn train_selector(
    descriptors: &[Descriptor],
    labels: &[usize],
    classes: usize,
    cfg: &SelectorConfig,
) -> Result<(SelectorNetwork, Vec<f64>)> {
    let dim = descriptors.first().ok_or_else(|| Error::config("no descriptors"))?.dim();
    if descriptors.len() != labels.len() {
        return Err(Error::LengthMismatch { left: descriptors.len(), right: labels.len() });
    }
    if classes == 0 || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::config("selector needs classes, hidden units and batch size >= 1"));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::config("selector learning rate must be finite and nonnegative"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::config(format!("label {bad} outside 0..{classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = SelectorNetwork::random(dim, cfg.hidden, classes, &mut rng);
    let mut order: Vec<usize> = (0..descriptors.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&Descriptor> = chunk.iter().map(|&i| &descriptors[i]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, g) = cross_entropy_grad(&net, &xs, &ys)?;
            net.apply(&g, cfg.learning_rate);
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((net, history))
}

/// Fraction of samples whose selected class equals the label.
pub fn accuracy(net: &SelectorNetwork, descriptors: &[Descriptor], labels: &[usize]) -> Result<f64> {
    let mut hits = 0usize;
    for (d, &l) in descriptors.iter().zip(labels) {
        if select(net, d)?.0 == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / descriptors.len().max(1) as f64)
}
