//! The online tracking state machine.
//!
//! Each frame: crop the ROI at the previous position for three scales,
//! compress with the adapted expert, keep the ranked channels, window them,
//! correlate with the running filters, fuse by validation score, locate the
//! sub-pixel peak, pick the best scale, handle full occlusion, and update the
//! filters at the new position.

use serde::{Deserialize, Serialize};

use crate::adapt::{background_channel_removal, feature_box, fine_tune_initial, AdaptationConfig, ChannelRanking};
use crate::autoencoder::AutoEncoderModel;
use crate::cf::{ideal_distance, integrate, response, subpixel_peak, update_bank, FilterBank, ResponseMap};
use crate::context::{make_descriptor, select, ContextModel};
use crate::error::{Error, Result};
use crate::features::{augment_initial, resample_box, roi_box, BoundingBox, FeatureSource, ImageFrame};
use crate::numerics::{cosine_window, gaussian_label, FeatureMap, Plane};

pub const SCALE_STEP: f64 = 1.015;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub roi_factor: f64,
    /// Label and ideal-response width relative to the feature size.
    pub sigma_g: f64,
    pub gamma: f64,
    pub lambda_s: f64,
    pub lambda_re: f64,
    pub n_re: usize,
    pub scale_step: f64,
    pub scale_search: bool,
    pub occlusion_handling: bool,
    /// Keep updating the live filters while a re-detection is pending.
    pub update_during_occlusion: bool,
    pub adaptation: AdaptationConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            roi_factor: 2.5,
            sigma_g: 0.05,
            gamma: 0.025,
            lambda_s: 50.0,
            lambda_re: 0.7,
            n_re: 50,
            scale_step: SCALE_STEP,
            scale_search: true,
            occlusion_handling: true,
            update_during_occlusion: true,
            adaptation: AdaptationConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.roi_factor > 0.0) || !(self.sigma_g > 0.0) || !(self.lambda_s > 0.0) {
            return Err(Error::config("ROI factor, sigma_g and lambda_s must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(self.lambda_re >= 0.0) || !(self.scale_step > 0.0) {
            return Err(Error::config("lambda_re must be nonnegative and the scale step positive"));
        }
        Ok(())
    }
}

/// The pretrained base model, the experts, and the selector choosing among them.
#[derive(Debug, Clone)]
pub struct TrackerModels {
    pub base: AutoEncoderModel,
    pub experts: Vec<AutoEncoderModel>,
    pub context: Option<ContextModel>,
}

impl TrackerModels {
    /// Tracks with one model and no context selection.
    pub fn single(model: AutoEncoderModel) -> Self {
        Self { base: model, experts: Vec::new(), context: None }
    }

    pub fn new(base: AutoEncoderModel, experts: Vec<AutoEncoderModel>, context: ContextModel) -> Result<Self> {
        if experts.len() != context.experts() {
            return Err(Error::shape(format!("{} expert models for {} contexts", experts.len(), context.experts())));
        }
        if context.selector.dim != base.compressed_channels() {
            return Err(Error::shape("selector input differs from the base compressed channels"));
        }
        if experts.iter().any(|e| e.input_channels() != base.input_channels() || e.depth() != base.depth()) {
            return Err(Error::shape("experts differ in architecture from the base model"));
        }
        Ok(Self { base, experts, context: Some(context) })
    }

    /// The expert for a first-frame feature map (0-based index), or the
    /// base model when no selector is available.
    pub fn select_expert(&self, x: &FeatureMap) -> Result<(Option<usize>, &AutoEncoderModel)> {
        match &self.context {
            Some(ctx) if !self.experts.is_empty() => {
                let d = make_descriptor(&self.base.compress(x)?);
                let (k, _) = select(&ctx.selector, &d)?;
                Ok((Some(k), &self.experts[k]))
            }
            _ => Ok((None, &self.base)),
        }
    }
}

/// A frozen filter snapshot searching for the target after a response drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Redetection {
    pub frames_left: usize,
    pub saved_bank: FilterBank,
    pub saved_scale: f64,
    pub saved_target: BoundingBox,
    pub saved_roi_size: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OcclusionState {
    pub redetection: Option<Redetection>,
}

impl OcclusionState {
    pub fn active(&self) -> bool {
        self.redetection.is_some()
    }
}

/// Outcome of one occlusion-logic update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcclusionEvent {
    Normal,
    Triggered,
    Waiting,
    Expired,
}

/// `(1 - gamma) * avg + gamma * r_max`.
pub fn running_average(rmax_avg: f64, r_max: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * rmax_avg + gamma * r_max
}

/// Running-average and trigger rule on a non-occluded frame: returns the new
/// average and whether the drop triggers re-detection. The average is left
/// unchanged on a trigger.
pub fn occlusion_update(rmax_avg: f64, r_max: f64, gamma: f64, lambda_re: f64) -> (f64, bool) {
    if r_max < lambda_re * rmax_avg {
        (rmax_avg, true)
    } else {
        (running_average(rmax_avg, r_max, gamma), false)
    }
}

/// One per-frame record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: usize,
    pub bbox: BoundingBox,
    pub r_max: f64,
    pub occluded: bool,
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    pub target: BoundingBox,
    /// ROI extent `(W, H)` at the current scale.
    pub roi_size: (f64, f64),
    pub bank: FilterBank,
    pub kept: ChannelRanking,
    pub expert: AutoEncoderModel,
    pub expert_index: Option<usize>,
    pub scale: f64,
    pub rmax_avg: f64,
    pub occlusion: OcclusionState,
    pub frame_index: usize,
    cfg: TrackerConfig,
    window: Plane,
    feature_size: usize,
}

/// Validation-score fusion with the scores normalized to sum to one.
///
/// Normalizing keeps the fused peak on the scale of a single response, so
/// `R_max` stays comparable across frames and scales and never underflows.
/// The weights are computed in the log domain.
fn fuse(bank: &FilterBank, planes: &[Plane], sigma: f64, lambda_s: f64) -> Result<ResponseMap> {
    let mut responses = Vec::with_capacity(planes.len());
    let mut log_scores = Vec::with_capacity(planes.len());
    for (f, z) in bank.channels.iter().zip(planes) {
        let r = response(f, z)?;
        log_scores.push(-lambda_s * ideal_distance(&r, sigma));
        responses.push(r);
    }
    let top = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = log_scores.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    integrate(&responses, &weights)
}

struct Measurement {
    planes: Vec<Plane>,
}

fn measure(
    frame: &ImageFrame,
    roi: &BoundingBox,
    features: &dyn FeatureSource,
    expert: &AutoEncoderModel,
    keep: &[usize],
    window: &Plane,
) -> Result<Measurement> {
    let patch = resample_box(frame, roi, features.input_size())?;
    let x = features.extract(&patch)?;
    let z = expert.compress_selected(&x, keep)?;
    let planes = (0..z.channels()).map(|k| z.channel(k).hadamard(window)).collect();
    Ok(Measurement { planes })
}

fn check_source(features: &dyn FeatureSource, model: &AutoEncoderModel) -> Result<()> {
    if features.channels() != model.input_channels() {
        return Err(Error::shape(format!(
            "feature source yields {} channels, model expects {}",
            features.channels(),
            model.input_channels()
        )));
    }
    if features.feature_size() < 3 {
        return Err(Error::config("feature maps must be at least 3x3"));
    }
    Ok(())
}

/// Initializes a tracker on the first frame.
///
/// Selects the expert, fine-tunes it on the seven augmented ROI samples,
/// ranks channels by foreground ratio, and trains the first filter bank.
pub fn init(
    frame: &ImageFrame,
    target: &BoundingBox,
    models: &TrackerModels,
    features: &dyn FeatureSource,
    cfg: &TrackerConfig,
) -> Result<(TrackerState, FrameResult)> {
    cfg.validate()?;
    check_source(features, &models.base)?;
    let s = features.feature_size();
    let roi = roi_box(target, cfg.roi_factor)?;
    let patch = resample_box(frame, &roi, features.input_size())?;
    let x = features.extract(&patch)?;
    let (expert_index, selected) = models.select_expert(&x)?;

    let label = gaussian_label(s, cfg.sigma_g * s as f64);
    let augmented = augment_initial(&patch).iter().map(|p| features.extract(p)).collect::<Result<Vec<_>>>()?;
    let expert = fine_tune_initial(selected, &augmented, &label, &cfg.adaptation)?.model;

    let z = expert.compress(&x)?;
    let n_keep = cfg.adaptation.n_keep.min(z.channels());
    let kept = background_channel_removal(&z, &feature_box(target, &roi, s), n_keep)?;
    let window = cosine_window(s);
    let planes: Vec<Plane> = kept.kept_indices.iter().map(|&k| z.channel(k).hadamard(&window)).collect();

    let bank = FilterBank::train(&planes, label, cfg.adaptation.cf_lambda, cfg.gamma)?;
    let first = fuse(&bank, &planes, cfg.sigma_g * s as f64, cfg.lambda_s)?;
    let state = TrackerState {
        target: *target,
        roi_size: (roi.w, roi.h),
        bank,
        kept,
        expert,
        expert_index,
        scale: 1.0,
        rmax_avg: first.max_value.max(0.0),
        occlusion: OcclusionState::default(),
        frame_index: 0,
        cfg: cfg.clone(),
        window,
        feature_size: s,
    };
    let result = FrameResult { frame: 0, bbox: *target, r_max: first.max_value, occluded: false };
    Ok((state, result))
}

/// Image-space displacement of the target implied by a response peak.
///
/// The response is a cross-correlation, so content moving by `+d` cells
/// moves the peak from the label center to `center - d`. A flat response
/// carries no location and yields no motion.
fn displacement(r: &ResponseMap, roi_size: (f64, f64), s: usize) -> (f64, f64) {
    let min = r.plane.data().iter().copied().fold(f64::INFINITY, f64::min);
    if !(r.max_value > min) {
        return (0.0, 0.0);
    }
    let (px, py) = subpixel_peak(r);
    let c = (s / 2) as f64;
    let scale = s as f64;
    (((c - px) * roi_size.0 / scale).round(), ((c - py) * roi_size.1 / scale).round())
}

impl TrackerState {
    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn feature_size(&self) -> usize {
        self.feature_size
    }

    fn sigma(&self) -> f64 {
        self.cfg.sigma_g * self.feature_size as f64
    }

    fn measure_at(
        &self,
        frame: &ImageFrame,
        center: (f64, f64),
        roi_size: (f64, f64),
        features: &dyn FeatureSource,
    ) -> Result<Vec<Plane>> {
        let roi = BoundingBox::from_center(center.0, center.1, roi_size.0, roi_size.1);
        Ok(measure(frame, &roi, features, &self.expert, &self.kept.kept_indices, &self.window)?.planes)
    }

    /// Fused responses of the live filters for the unit, up and down scales
    /// around the current position, and the index of the winning scale.
    /// Ties prefer the unit scale.
    pub fn scale_search(
        &self,
        frame: &ImageFrame,
        features: &dyn FeatureSource,
    ) -> Result<(usize, Vec<(f64, ResponseMap)>)> {
        let center = self.target.center();
        let step = self.cfg.scale_step;
        let factors: &[f64] = if self.cfg.scale_search { &[1.0, step, 1.0 / step] } else { &[1.0] };
        let mut out = Vec::with_capacity(factors.len());
        for &f in factors {
            let size = (self.roi_size.0 * f, self.roi_size.1 * f);
            let planes = self.measure_at(frame, center, size, features)?;
            out.push((f, fuse(&self.bank, &planes, self.sigma(), self.cfg.lambda_s)?));
        }
        let mut best = 0;
        for (i, (_, r)) in out.iter().enumerate() {
            if r.max_value > out[best].1.max_value {
                best = i;
            }
        }
        Ok((best, out))
    }

    /// Processes the next frame and returns its record.
    pub fn step(&mut self, frame: &ImageFrame, features: &dyn FeatureSource) -> Result<FrameResult> {
        let s = self.feature_size;
        let (best, searched) = self.scale_search(frame, features)?;
        let unit = &searched[0].1;
        let (factor, chosen) = (&searched[best].0, &searched[best].1);
        let r_max = chosen.max_value;

        let (dx, dy) = displacement(unit, self.roi_size, s);
        let (cx, cy) = self.target.center();
        let mut center = (cx + dx, cy + dy);
        let mut target_size = (self.target.w * factor, self.target.h * factor);
        let mut roi_size = (self.roi_size.0 * factor, self.roi_size.1 * factor);
        let mut scale = self.scale * factor;
        let previous_bank = &self.bank;

        let mut adopted: Option<FilterBank> = None;
        let event = if !self.cfg.occlusion_handling {
            OcclusionEvent::Normal
        } else if let Some(re) = &self.occlusion.redetection {
            let (sx, sy) = re.saved_target.center();
            let planes = self.measure_at(frame, (sx, sy), re.saved_roi_size, features)?;
            let saved = fuse(&re.saved_bank, &planes, self.sigma(), self.cfg.lambda_s)?;
            if saved.max_value > r_max {
                let (ddx, ddy) = displacement(&saved, re.saved_roi_size, s);
                center = (sx + ddx, sy + ddy);
                target_size = (re.saved_target.w, re.saved_target.h);
                roi_size = re.saved_roi_size;
                scale = re.saved_scale;
                adopted = Some(re.saved_bank.clone());
                OcclusionEvent::Expired
            } else if re.frames_left <= 1 {
                OcclusionEvent::Expired
            } else {
                OcclusionEvent::Waiting
            }
        } else {
            let (avg, triggered) = occlusion_update(self.rmax_avg, r_max, self.cfg.gamma, self.cfg.lambda_re);
            self.rmax_avg = avg;
            if triggered {
                OcclusionEvent::Triggered
            } else {
                OcclusionEvent::Normal
            }
        };
        match event {
            OcclusionEvent::Triggered => {
                self.occlusion.redetection = Some(Redetection {
                    frames_left: self.cfg.n_re,
                    saved_bank: previous_bank.clone(),
                    saved_scale: self.scale,
                    saved_target: self.target,
                    saved_roi_size: self.roi_size,
                });
            }
            OcclusionEvent::Waiting => {
                if let Some(re) = self.occlusion.redetection.as_mut() {
                    re.frames_left -= 1;
                }
            }
            OcclusionEvent::Expired => self.occlusion.redetection = None,
            OcclusionEvent::Normal => {}
        }
        if let Some(bank) = adopted {
            self.bank = bank;
        }

        self.target = BoundingBox::from_center(center.0, center.1, target_size.0, target_size.1);
        self.roi_size = roi_size;
        self.scale = scale;

        if !self.occlusion.active() || self.cfg.update_during_occlusion {
            let planes = self.measure_at(frame, center, roi_size, features)?;
            let fresh = self.bank.estimate_all(&planes)?;
            self.bank = update_bank(&self.bank, &fresh)?;
        }
        self.frame_index += 1;
        Ok(FrameResult { frame: self.frame_index, bbox: self.target, r_max, occluded: self.occlusion.active() })
    }
}
