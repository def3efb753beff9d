//! First-frame adaptation of the selected expert: fine-tuning under the
//! correlation-filter orthogonality loss, and background channel removal.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{Activation, AutoEncoderModel, EncoderTrace, Gradients};
use crate::error::{Error, Result};
use crate::features::BoundingBox;
use crate::numerics::{fft2, fft2_complex, ifft2, FeatureMap, Plane, SpectrumPlane};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    pub lambda_theta: f64,
    pub adapt_lr: f64,
    pub adapt_epochs: usize,
    /// Channels kept after background channel removal.
    pub n_keep: usize,
    /// Correlation-filter regularizer.
    pub cf_lambda: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self { lambda_theta: 1e3, adapt_lr: 1e-6, adapt_epochs: 30, n_keep: 25, cf_lambda: 1.0 }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_theta >= 0.0) {
            return Err(Error::config("lambda_theta must be nonnegative"));
        }
        if !(self.adapt_lr >= 0.0 && self.adapt_lr.is_finite()) {
            return Err(Error::config("adaptation learning rate must be finite and nonnegative"));
        }
        if self.n_keep == 0 {
            return Err(Error::config("must keep at least one channel"));
        }
        if !(self.cf_lambda > 0.0) {
            return Err(Error::config("correlation-filter lambda must be positive during adaptation"));
        }
        Ok(())
    }
}

/// `(u . v)^2 / (|u|^2 |v|^2)`.
pub fn orthogonality(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch { left: u.len(), right: v.len() });
    }
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot * dot / (nu * nv)).min(1.0))
}

/// Loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationLoss {
    pub reconstruction: f64,
    /// `sum_{k,l} Theta(w_k, w_l)` over samples and stages, before weighting.
    pub orthogonality: f64,
    pub total: f64,
}

/// Spatial filters of every channel in a stage map, with the spectra needed
/// for backpropagation.
struct StageFilters {
    filters: Vec<Plane>,
    spectra: Vec<SpectrumPlane>,
}

fn stage_filters(stage: &Activation, yf: &SpectrumPlane, lambda: f64) -> Result<StageFilters> {
    let (w, h) = (stage.width, stage.height);
    let mut filters = Vec::with_capacity(stage.channels);
    let mut spectra = Vec::with_capacity(stage.channels);
    for k in 0..stage.channels {
        let zf = fft2(&Plane::new(w, h, stage.channel(k))?);
        let data = zf.data().iter().zip(yf.data()).map(|(z, y)| z * y / (z.norm_sqr() + lambda)).collect();
        filters.push(ifft2(&SpectrumPlane::new(w, h, data)?)?);
        spectra.push(zf);
    }
    Ok(StageFilters { filters, spectra })
}

/// `sum_{k,l} Theta(w_k, w_l)` with diagonal terms as 1 and zero filters
/// contributing nothing, plus its gradient w.r.t. every filter.
fn theta_sum(filters: &[Plane], want_grad: bool) -> (f64, Vec<Vec<f64>>) {
    let c = filters.len();
    let norms: Vec<f64> = filters.iter().map(|f| f.sum_sq()).collect();
    let live: Vec<usize> = (0..c).filter(|&k| norms[k] > 0.0).collect();
    let mut value = live.len() as f64;
    let n = filters.first().map_or(0, |f| f.data().len());
    let mut grads = if want_grad { vec![vec![0.0; n]; c] } else { Vec::new() };
    for (a, &k) in live.iter().enumerate() {
        for &l in &live[a + 1..] {
            let g = filters[k].dot(&filters[l]);
            let (nk, nl) = (norms[k], norms[l]);
            value += 2.0 * g * g / (nk * nl);
            if want_grad {
                // Both (k, l) and (l, k) terms.
                let ck_l = 4.0 * g / (nk * nl);
                let ck_k = -4.0 * g * g / (nk * nk * nl);
                let cl_l = -4.0 * g * g / (nk * nl * nl);
                let (wk, wl) = (filters[k].data(), filters[l].data());
                for i in 0..n {
                    grads[k][i] += ck_l * wl[i] + ck_k * wk[i];
                    grads[l][i] += ck_l * wk[i] + cl_l * wl[i];
                }
            }
        }
    }
    (value, grads)
}

/// Pulls a gradient w.r.t. a spatial filter back to its input channel
/// through the per-bin quotient and both transforms.
fn filter_backward(g: &[f64], zf: &SpectrumPlane, yf: &SpectrumPlane, lambda: f64) -> Result<Vec<f64>> {
    let (w, h) = (zf.width(), zf.height());
    let n = (w * h) as f64;
    let gf = fft2(&Plane::new(w, h, g.to_vec())?);
    let data = gf
        .data()
        .iter()
        .zip(zf.data())
        .zip(yf.data())
        .map(|((g, z), y)| {
            let d = z.norm_sqr() + lambda;
            let p = y * lambda / (d * d);
            let q = -(z * z) * y / (d * d);
            let a: Complex64 = g.conj() / n;
            a * p + a.conj() * q.conj()
        })
        .collect();
    let b = fft2_complex(&SpectrumPlane::new(w, h, data)?);
    Ok(b.data().iter().map(|v| v.re).collect())
}

fn check_inputs(expert: &AutoEncoderModel, samples: &[FeatureMap], y: &Plane) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::shape("no adaptation samples"))?;
    if samples.iter().any(|s| s.shape() != first.shape()) {
        return Err(Error::shape("adaptation samples differ in shape"));
    }
    if (y.width(), y.height()) != (first.width(), first.height()) {
        return Err(Error::shape("label and feature maps differ in size"));
    }
    if first.channels() != expert.input_channels() {
        return Err(Error::shape("samples do not match the expert's input channels"));
    }
    Ok(())
}

fn evaluate(
    expert: &AutoEncoderModel,
    samples: &[FeatureMap],
    y: &Plane,
    cfg: &AdaptationConfig,
    want_grad: bool,
) -> Result<(AdaptationLoss, Option<Gradients>)> {
    check_inputs(expert, samples, y)?;
    cfg.validate()?;
    let yf = fft2(y);
    let mut grads = Gradients::zeros_like(expert);
    let mut recon = 0.0;
    let mut ortho = 0.0;
    for x in samples {
        let trace: EncoderTrace = expert.encode_trace(Activation::from_map(x));
        let mut stage_grads = expert.zero_stage_grads(x.width(), x.height());
        recon += expert.reconstruction_backward(&trace, &x.to_f64(), 1.0, &mut grads, &mut stage_grads);
        for i in 1..=expert.depth() {
            let stage = trace.stage(i);
            let sf = stage_filters(stage, &yf, cfg.cf_lambda)?;
            let need = want_grad && cfg.lambda_theta != 0.0;
            let (value, dw) = theta_sum(&sf.filters, need);
            ortho += value;
            if need {
                for (k, g) in dw.iter().enumerate() {
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let mut dz = filter_backward(g, &sf.spectra[k], &yf, cfg.cf_lambda)?;
                    dz.iter_mut().for_each(|v| *v *= cfg.lambda_theta);
                    stage_grads[i].add_channel(k, &dz);
                }
            }
        }
        if want_grad {
            expert.encoder_backward(&trace, stage_grads, &mut grads);
        }
    }
    let loss = AdaptationLoss { reconstruction: recon, orthogonality: ortho, total: recon + cfg.lambda_theta * ortho };
    Ok((loss, want_grad.then_some(grads)))
}

/// `sum_j sum_i ||X_j - AE_i(X_j)||^2 + lambda_theta sum_{k,l} Theta(w_jik, w_jil)`.
pub fn adaptation_loss(
    expert: &AutoEncoderModel,
    samples: &[FeatureMap],
    y: &Plane,
    cfg: &AdaptationConfig,
) -> Result<AdaptationLoss> {
    Ok(evaluate(expert, samples, y, cfg, false)?.0)
}

/// Exact gradient of [`adaptation_loss`] w.r.t. every kernel and bias.
pub fn adaptation_grad(
    expert: &AutoEncoderModel,
    samples: &[FeatureMap],
    y: &Plane,
    cfg: &AdaptationConfig,
) -> Result<(AdaptationLoss, Gradients)> {
    let (loss, grads) = evaluate(expert, samples, y, cfg, true)?;
    Ok((loss, grads.expect("gradient requested")))
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub model: AutoEncoderModel,
    /// Loss of every accepted iterate, starting with the initial model.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on the adaptation loss for `adapt_epochs`
/// gradient evaluations. A step that raises the loss is undone and the rate
/// halved, so the recorded losses never increase.
pub fn fine_tune_initial(
    expert: &AutoEncoderModel,
    samples: &[FeatureMap],
    y: &Plane,
    cfg: &AdaptationConfig,
) -> Result<FineTuneOutcome> {
    let mut model = expert.clone();
    let (mut loss, mut grads) = adaptation_grad(&model, samples, y, cfg)?;
    let mut losses = vec![loss.total];
    let mut lr = cfg.adapt_lr;
    if lr == 0.0 {
        return Ok(FineTuneOutcome { model, losses });
    }
    for _ in 1..cfg.adapt_epochs {
        let mut candidate = model.clone();
        candidate.apply_gradients(&grads, lr);
        let (next, next_grads) = adaptation_grad(&candidate, samples, y, cfg)?;
        if next.total.is_finite() && next.total <= loss.total {
            model = candidate;
            loss = next;
            grads = next_grads;
            losses.push(loss.total);
        } else {
            lr *= 0.5;
        }
    }
    Ok(FineTuneOutcome { model, losses })
}

/// Foreground ratios of every channel and the ranked channels kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanking {
    pub ratios: Vec<f64>,
    pub kept_indices: Vec<usize>,
}

/// Target box in feature-cell coordinates: the image-space box mapped into
/// the `size x size` grid spanned by `roi`, rounded outward and clipped.
pub fn feature_box(target: &BoundingBox, roi: &BoundingBox, size: usize) -> BoundingBox {
    let sx = size as f64 / roi.w;
    let sy = size as f64 / roi.h;
    let s = size as f64;
    let x0 = ((target.x - roi.x) * sx).floor().clamp(0.0, s);
    let y0 = ((target.y - roi.y) * sy).floor().clamp(0.0, s);
    let x1 = ((target.x + target.w - roi.x) * sx).ceil().clamp(0.0, s);
    let y1 = ((target.y + target.h - roi.y) * sy).ceil().clamp(0.0, s);
    BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
}

/// `ratio_k = |Z_k inside box|_1 / |Z_k|_1`; a cell is inside when its center
/// lies in the closed box. Channels are ranked by descending ratio, ties by
/// index, and the first `n_keep` kept.
pub fn background_channel_removal(z: &FeatureMap, target: &BoundingBox, n_keep: usize) -> Result<ChannelRanking> {
    let (w, h, c) = z.shape();
    if n_keep == 0 || n_keep > c {
        return Err(Error::InvalidChannelCount { requested: n_keep, available: c });
    }
    let inside = |v: usize, lo: f64, len: f64| {
        let center = v as f64 + 0.5;
        center >= lo && center <= lo + len
    };
    let mask: Vec<bool> =
        (0..w * h).map(|p| inside(p % w, target.x, target.w) && inside(p / w, target.y, target.h)).collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::DegenerateBox(format!("{target:?} contains no feature cell")));
    }
    let mut fg = vec![0.0; c];
    let mut all = vec![0.0; c];
    for (p, cell) in z.data().chunks_exact(c).enumerate() {
        for k in 0..c {
            let a = (cell[k] as f64).abs();
            all[k] += a;
            if mask[p] {
                fg[k] += a;
            }
        }
    }
    let ratios: Vec<f64> = fg.iter().zip(&all).map(|(f, a)| if *a > 0.0 { f / a } else { 0.0 }).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]).then(a.cmp(&b)));
    order.truncate(n_keep);
    Ok(ChannelRanking { ratios, kept_indices: order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::estimate_filter;
    use crate::numerics::gaussian_label;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> FeatureMap {
        let data = (0..w * h * c).map(|_| rng.random_range(0.0..1.0f32)).collect();
        FeatureMap::new(w, h, c, data).unwrap()
    }

    fn lively(c1: usize, depth: usize, seed: u64) -> AutoEncoderModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = AutoEncoderModel::new(c1, depth, &mut rng).unwrap();
        for layer in m.layers_mut() {
            layer.kernel.iter_mut().for_each(|w| *w *= 40.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.05);
        }
        m
    }

    #[test]
    fn orthogonality_examples() {
        assert!((orthogonality(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(orthogonality(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((orthogonality(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(orthogonality(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn tiny_fixture_matches_composed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = lively(4, 1, 2);
        let x = random_map(&mut rng, 4, 4, 4);
        let y = gaussian_label(4, 0.8);
        let cfg = AdaptationConfig { lambda_theta: 3.0, ..Default::default() };
        let got = adaptation_loss(&m, &[x.clone()], &y, &cfg).unwrap();

        let recon: f64 =
            m.forward_full(&x).unwrap().data().iter().zip(x.data()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
        let z = m.compress(&x).unwrap();
        let filters: Vec<Vec<f64>> =
            (0..2).map(|k| estimate_filter(&z.channel(k), &y, 1.0).unwrap().spatial().unwrap().into_data()).collect();
        let mut theta = 0.0;
        for k in 0..2 {
            for l in 0..2 {
                theta += orthogonality(&filters[k], &filters[l]).unwrap();
            }
        }
        assert!((got.reconstruction - recon).abs() < 1e-4 * recon.max(1.0));
        assert!((got.orthogonality - theta).abs() < 1e-5);
        assert!((got.total - (got.reconstruction + 3.0 * got.orthogonality)).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_reduces_to_reconstruction_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = lively(8, 2, 4);
        let xs: Vec<FeatureMap> = (0..2).map(|_| random_map(&mut rng, 5, 5, 8)).collect();
        let cfg = AdaptationConfig { lambda_theta: 0.0, ..Default::default() };
        let (loss, g) = adaptation_grad(&m, &xs, &gaussian_label(5, 1.0), &cfg).unwrap();
        let (recon, mut g_ref) = crate::autoencoder::backward(&m, &xs, &xs).unwrap();
        // backward() averages over the batch; the adaptation loss sums.
        g_ref.scale(2.0);
        assert!((loss.total - 2.0 * recon).abs() < 1e-9 * loss.total.max(1.0));
        for (a, b) in g.flatten().iter().zip(g_ref.flatten()) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    fn relative_fd_error(m: &AutoEncoderModel, xs: &[FeatureMap], y: &Plane, cfg: &AdaptationConfig) -> f64 {
        let (_, g) = adaptation_grad(m, xs, y, cfg).unwrap();
        let analytic = g.flatten();
        let h = 1e-5;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        let mut idx = 0;
        for l in 0..2 * m.depth() {
            let layer_params = m.layers().nth(l).unwrap().param_count();
            for p in 0..layer_params {
                let perturbed = |delta: f64| {
                    let mut c = m.clone();
                    let layer = c.layers_mut().nth(l).unwrap();
                    if p < layer.kernel.len() {
                        layer.kernel[p] += delta;
                    } else {
                        layer.bias[p - layer.kernel.len()] += delta;
                    }
                    adaptation_loss(&c, xs, y, cfg).unwrap().total
                };
                let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                num = num.max((fd - analytic[idx]).abs());
                den = den.max(fd.abs().max(analytic[idx].abs()));
                idx += 1;
            }
        }
        num / den
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = lively(4, 1, 6);
        assert!(m.param_count() <= 300);
        let xs: Vec<FeatureMap> = (0..2).map(|_| random_map(&mut rng, 5, 4, 4)).collect();
        let cfg = AdaptationConfig { lambda_theta: 10.0, cf_lambda: 0.5, ..Default::default() };
        let err = relative_fd_error(&m, &xs, &gaussian_label_rect(5, 4), &cfg);
        assert!(err < 1e-3, "relative error {err}");
    }

    fn gaussian_label_rect(w: usize, h: usize) -> Plane {
        crate::numerics::gaussian_at(w, h, (w / 2) as f64, (h / 2) as f64, 0.9)
    }

    #[test]
    fn duplicated_sample_doubles_its_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = lively(4, 1, 8);
        let x = random_map(&mut rng, 4, 4, 4);
        let y = gaussian_label(4, 0.8);
        let cfg = AdaptationConfig { lambda_theta: 5.0, ..Default::default() };
        let (l1, g1) = adaptation_grad(&m, &[x.clone()], &y, &cfg).unwrap();
        let (l2, g2) = adaptation_grad(&m, &[x.clone(), x], &y, &cfg).unwrap();
        assert!((l2.total - 2.0 * l1.total).abs() < 1e-9 * l2.total);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fine_tuning_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = lively(8, 1, 10);
        let xs: Vec<FeatureMap> = (0..7).map(|_| random_map(&mut rng, 6, 6, 8)).collect();
        let y = gaussian_label(6, 1.0);
        let frozen = AdaptationConfig { adapt_lr: 0.0, ..Default::default() };
        assert_eq!(fine_tune_initial(&m, &xs, &y, &frozen).unwrap().model, m);
        let cfg = AdaptationConfig { adapt_lr: 1e-4, adapt_epochs: 15, ..Default::default() };
        let a = fine_tune_initial(&m, &xs, &y, &cfg).unwrap();
        let b = fine_tune_initial(&m, &xs, &y, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.losses.last().unwrap() < a.losses.first().unwrap());
    }

    #[test]
    fn channel_removal_examples() {
        // Channel 0 lives inside the box, channel 1 is uniform, channel 2 is zero.
        let mut z = FeatureMap::zeros(4, 4, 3);
        for y in 0..4 {
            for x in 0..4 {
                z.set(x, y, 1, 2.0);
                if x < 2 && y < 2 {
                    z.set(x, y, 0, 1.5);
                }
            }
        }
        let r = background_channel_removal(&z, &BoundingBox::new(0.0, 0.0, 2.0, 2.0), 2).unwrap();
        assert_eq!(r.ratios, vec![1.0, 0.25, 0.0]);
        assert_eq!(r.kept_indices, vec![0, 1]);
        let all = background_channel_removal(&z, &BoundingBox::new(0.0, 0.0, 2.0, 2.0), 3).unwrap();
        assert_eq!(all.kept_indices, vec![0, 1, 2]);
        assert!(matches!(
            background_channel_removal(&z, &BoundingBox::new(0.0, 0.0, 2.0, 2.0), 4),
            Err(Error::InvalidChannelCount { .. })
        ));
    }

    #[test]
    fn channel_ratios_match_two_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = random_map(&mut rng, 7, 6, 5);
        let bx = BoundingBox::new(1.0, 2.0, 3.0, 2.0);
        let r = background_channel_removal(&z, &bx, 5).unwrap();
        for k in 0..5 {
            let mut fg = 0.0;
            let mut all = 0.0;
            for y in 0..6 {
                for x in 0..7 {
                    let v = z.get(x, y, k) as f64;
                    all += v;
                    if (1..=3).contains(&x) && (2..=3).contains(&y) {
                        fg += v;
                    }
                }
            }
            assert!((r.ratios[k] - fg / all).abs() < 1e-12);
        }
        let mut sorted = r.kept_indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn feature_box_rounds_outward() {
        let roi = BoundingBox::new(10.0, 20.0, 100.0, 100.0);
        let t = BoundingBox::new(41.0, 50.5, 40.0, 39.0);
        let b = feature_box(&t, &roi, 32);
        assert_eq!(b, BoundingBox::new(9.0, 9.0, 14.0, 14.0));
    }
}
