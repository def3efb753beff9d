use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

use super::conv::{Activation, ConvLayer, ConvTrace, LayerGrad};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.01;

/// Stacked convolutional auto-encoder with channel-halving encoders.
///
/// `encoders[l]` is `f_{l+1}: c_{l+1} -> c_{l+2}` and `decoders[k]` is
/// `g_{k+1}: c_{k+2} -> c_{k+1}`, so the full model applies
/// `decoders[0](decoders[1](..decoders[N-1](encoders[N-1](..encoders[0](x)))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoderModel {
    pub encoders: Vec<ConvLayer>,
    pub decoders: Vec<ConvLayer>,
}

/// Gradient structure mirroring [`AutoEncoderModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoders: Vec<LayerGrad>,
    pub decoders: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &AutoEncoderModel) -> Self {
        Self {
            encoders: model.encoders.iter().map(LayerGrad::zeros_like).collect(),
            decoders: model.decoders.iter().map(LayerGrad::zeros_like).collect(),
        }
    }

    /// All entries in checkpoint order: encoders then decoders, kernel then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.encoders.iter().chain(&self.decoders) {
            out.extend_from_slice(&g.kernel);
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.encoders.iter_mut().chain(self.decoders.iter_mut()) {
            g.kernel.iter_mut().for_each(|v| *v *= s);
            g.bias.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Encoder activations of one input, kept for backpropagation.
pub(crate) struct EncoderTrace {
    pub input: Activation,
    pub layers: Vec<ConvTrace>,
}

impl EncoderTrace {
    /// Output of encoder stage `i` (1-based); stage 0 is the input.
    pub fn stage(&self, i: usize) -> &Activation {
        if i == 0 {
            &self.input
        } else {
            &self.layers[i - 1].output
        }
    }
}

impl AutoEncoderModel {
    /// Gaussian-initialized model (std [`INIT_STD`], zero biases).
    pub fn new<R: Rng + ?Sized>(input_channels: usize, depth: usize, rng: &mut R) -> Result<Self> {
        Self::with_init(input_channels, depth, |c_in, c_out| ConvLayer::random(c_in, c_out, INIT_STD, rng))
    }

    pub fn zeros(input_channels: usize, depth: usize) -> Result<Self> {
        Self::with_init(input_channels, depth, ConvLayer::zeros)
    }

    fn with_init(
        input_channels: usize,
        depth: usize,
        mut layer: impl FnMut(usize, usize) -> ConvLayer,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("auto-encoder depth must be at least 1"));
        }
        if input_channels == 0 || !input_channels.is_multiple_of(1 << depth) {
            return Err(Error::config(format!("{input_channels} input channels cannot be halved {depth} times")));
        }
        let dims: Vec<usize> = (0..=depth).map(|l| input_channels >> l).collect();
        let encoders = (0..depth).map(|l| layer(dims[l], dims[l + 1])).collect();
        let decoders = (0..depth).map(|k| layer(dims[k + 1], dims[k])).collect();
        Ok(Self { encoders, decoders })
    }

    pub fn depth(&self) -> usize {
        self.encoders.len()
    }

    pub fn input_channels(&self) -> usize {
        self.encoders[0].c_in
    }

    /// Channel count after `stage` encoders (stage 0 is the input).
    pub fn stage_channels(&self, stage: usize) -> usize {
        if stage == 0 {
            self.input_channels()
        } else {
            self.encoders[stage - 1].c_out
        }
    }

    pub fn compressed_channels(&self) -> usize {
        self.stage_channels(self.depth())
    }

    pub fn param_count(&self) -> usize {
        self.encoders.iter().chain(&self.decoders).map(ConvLayer::param_count).sum()
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.encoders.iter().chain(&self.decoders)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.encoders.iter_mut().chain(self.decoders.iter_mut())
    }

    /// `params -= lr * grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        if lr == 0.0 {
            return;
        }
        let grads = grads.encoders.iter().chain(&grads.decoders);
        for (layer, g) in self.layers_mut().zip(grads) {
            layer.kernel.iter_mut().zip(&g.kernel).for_each(|(w, d)| *w -= lr * d);
            layer.bias.iter_mut().zip(&g.bias).for_each(|(b, d)| *b -= lr * d);
        }
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        if x.channels() != self.input_channels() {
            return Err(Error::shape(format!(
                "model expects {} channels, input has {}",
                self.input_channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    pub(crate) fn encode_trace(&self, input: Activation) -> EncoderTrace {
        let mut layers: Vec<ConvTrace> = Vec::with_capacity(self.depth());
        for enc in &self.encoders {
            let t = enc.trace(layers.last().map_or(&input, |t| &t.output));
            layers.push(t);
        }
        EncoderTrace { input, layers }
    }

    fn encode(&self, x: &Activation, stages: usize) -> Activation {
        let mut a = x.clone();
        for enc in &self.encoders[..stages] {
            a = enc.forward(&a);
        }
        a
    }

    fn decode(&self, z: &Activation, stage: usize) -> Activation {
        let mut d = z.clone();
        for dec in self.decoders[..stage].iter().rev() {
            d = dec.forward(&d);
        }
        d
    }

    /// `AE(X)`: all encoders, then all decoders.
    pub fn forward_full(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.forward_partial(x, self.depth())
    }

    /// `AE_i(X)`: the first `i` encoders followed by the matching `i` decoders.
    pub fn forward_partial(&self, x: &FeatureMap, i: usize) -> Result<FeatureMap> {
        self.check_input(x)?;
        if i == 0 || i > self.depth() {
            return Err(Error::IndexOutOfRange { index: i, max: self.depth() });
        }
        let a = Activation::from_map(x);
        Ok(self.decode(&self.encode(&a, i), i).to_map())
    }

    /// Compressed map `Z = f_N(..f_1(X))`, evaluated in single precision.
    pub fn compress(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.check_input(x)?;
        Ok(self.encoders.iter().fold(x.clone(), |a, enc| enc.infer(&a, None)))
    }

    /// Compressed map keeping only selected output channels of the last encoder.
    ///
    /// Equivalent to `compress(x).select_channels(keep)`, without evaluating
    /// the dropped channels.
    pub fn compress_selected(&self, x: &FeatureMap, keep: &[usize]) -> Result<FeatureMap> {
        self.check_input(x)?;
        let (last, inner) = self.encoders.split_last().expect("depth >= 1");
        if keep.is_empty() || keep.iter().any(|&k| k >= last.c_out) {
            return Err(Error::shape("kept channel out of range"));
        }
        let a = inner.iter().fold(x.clone(), |a, enc| enc.infer(&a, None));
        Ok(last.infer(&a, Some(keep)))
    }

    /// Reconstruction loss `sum_i ||target - AE_i(input)||^2` for one sample,
    /// scaled by `weight`. The gradient is accumulated into `grads`, and the
    /// gradient w.r.t. each encoder stage output into `stage_grads[i]`.
    pub(crate) fn reconstruction_backward(
        &self,
        trace: &EncoderTrace,
        target: &[f64],
        weight: f64,
        grads: &mut Gradients,
        stage_grads: &mut [Activation],
    ) -> f64 {
        let mut loss = 0.0;
        for stage in 1..=self.depth() {
            // Forward through g_stage .. g_1, keeping traces.
            let mut traces: Vec<ConvTrace> = Vec::with_capacity(stage);
            for dec in self.decoders[..stage].iter().rev() {
                let t = dec.trace(traces.last().map_or(trace.stage(stage), |t| &t.output));
                traces.push(t);
            }
            let out = &traces.last().expect("stage >= 1").output;
            let mut d = Activation::zeros(out.width, out.height, out.channels);
            for ((g, o), t) in d.data.iter_mut().zip(&out.data).zip(target) {
                let r = o - t;
                loss += weight * r * r;
                *g = 2.0 * weight * r;
            }
            // Backward through g_1 .. g_stage.
            for (k, t) in traces.iter().rev().enumerate() {
                d = self.decoders[k].backward(t, &d, &mut grads.decoders[k], true).expect("input gradient requested");
            }
            stage_grads[stage].add_assign(&d);
        }
        loss
    }

    /// Backpropagates per-stage output gradients through the encoders.
    pub(crate) fn encoder_backward(
        &self,
        trace: &EncoderTrace,
        mut stage_grads: Vec<Activation>,
        grads: &mut Gradients,
    ) {
        for l in (1..=self.depth()).rev() {
            let d = std::mem::replace(&mut stage_grads[l], Activation::zeros(1, 1, 1));
            let need_input = l > 1;
            if let Some(d_in) =
                self.encoders[l - 1].backward(&trace.layers[l - 1], &d, &mut grads.encoders[l - 1], need_input)
            {
                stage_grads[l - 1].add_assign(&d_in);
            }
        }
    }

    pub(crate) fn zero_stage_grads(&self, width: usize, height: usize) -> Vec<Activation> {
        (0..=self.depth()).map(|s| Activation::zeros(width, height, self.stage_channels(s))).collect()
    }
}

fn check_batch(model: &AutoEncoderModel, clean: &[FeatureMap], noisy: &[FeatureMap]) -> Result<()> {
    if clean.is_empty() || clean.len() != noisy.len() {
        return Err(Error::shape(format!(
            "batches must be nonempty and equal in length ({} vs {})",
            clean.len(),
            noisy.len()
        )));
    }
    for (c, n) in clean.iter().zip(noisy) {
        if c.shape() != n.shape() {
            return Err(Error::shape("clean and corrupted samples differ in shape"));
        }
        model.check_input(c)?;
    }
    Ok(())
}

/// Multi-stage reconstruction loss
/// `(1/m) sum_j sum_i ||X_j - AE_i(noisy_j)||^2`.
pub fn multistage_loss(model: &AutoEncoderModel, clean: &[FeatureMap], noisy: &[FeatureMap]) -> Result<f64> {
    check_batch(model, clean, noisy)?;
    let m = clean.len() as f64;
    let mut total = 0.0;
    for (c, n) in clean.iter().zip(noisy) {
        let target = c.to_f64();
        let x = Activation::from_map(n);
        for i in 1..=model.depth() {
            let out = model.decode(&model.encode(&x, i), i);
            total += out.data.iter().zip(&target).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
        }
    }
    Ok(total / m)
}

/// Exact gradient of [`multistage_loss`] w.r.t. every kernel and bias.
pub fn backward(model: &AutoEncoderModel, clean: &[FeatureMap], noisy: &[FeatureMap]) -> Result<(f64, Gradients)> {
    check_batch(model, clean, noisy)?;
    let weight = 1.0 / clean.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (c, n) in clean.iter().zip(noisy) {
        let trace = model.encode_trace(Activation::from_map(n));
        let mut stage_grads = model.zero_stage_grads(n.width(), n.height());
        loss += model.reconstruction_backward(&trace, &c.to_f64(), weight, &mut grads, &mut stage_grads);
        model.encoder_backward(&trace, stage_grads, &mut grads);
    }
    Ok((loss, grads))
}
