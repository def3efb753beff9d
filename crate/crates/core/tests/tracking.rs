mod common;

use std::sync::OnceLock;

use common::*;
use ctxtrack::autoencoder::AutoEncoderModel;
use ctxtrack::features::{BoundingBox, BuiltinFeatureConfig, BuiltinFeatures, ImageFrame};
use ctxtrack::synthetic::{occlusion, translating, SceneConfig};
use ctxtrack::tracker::{init, TrackerConfig, TrackerModels};

fn fixture() -> &'static TrackingFixture {
    static FX: OnceLock<TrackingFixture> = OnceLock::new();
    FX.get_or_init(tracking_fixture)
}

fn short(frames: usize) -> SceneConfig {
    SceneConfig { frames, ..Default::default() }
}

#[test]
fn static_target_does_not_move() {
    let seq = occlusion(&short(6), 40.0, (140.0, 100.0), 0..0);
    let run = track(fixture(), &seq, &TrackerConfig::default());
    for r in &run.results {
        assert_eq!(r.bbox.center(), seq.boxes[0].center());
    }
}

#[test]
fn three_pixel_shift_is_reported() {
    let seq = translating(&short(2), 40.0, (100.0, 80.0), (3.0, 0.0));
    let cfg = TrackerConfig { scale_search: false, ..Default::default() };
    let run = track(fixture(), &seq, &cfg);
    let (x0, y0) = run.results[0].bbox.center();
    let (x1, y1) = run.results[1].bbox.center();
    assert!((x1 - x0 - 3.0).abs() <= 1.0, "dx {}", x1 - x0);
    assert!((y1 - y0).abs() <= 1.0, "dy {}", y1 - y0);
}

#[test]
fn kept_channels_and_determinism() {
    let seq = translating(&short(8), 40.0, (60.0, 60.0), (1.5, 0.7));
    let a = track(fixture(), &seq, &TrackerConfig::default());
    let b = track(fixture(), &seq, &TrackerConfig::default());
    assert_eq!(a.kept_channels, 25.min(fixture().models.base.compressed_channels()));
    assert_eq!(a.results, b.results);
}

#[test]
fn occlusion_logic_is_silent_on_a_clean_sequence() {
    let seq = translating(&short(30), 40.0, (60.0, 60.0), (1.5, 0.7));
    let on = track(fixture(), &seq, &TrackerConfig::default());
    let off = track(fixture(), &seq, &TrackerConfig { occlusion_handling: false, ..Default::default() });
    assert!(on.results.iter().all(|r| !r.occluded));
    let boxes = |run: &TrackRun| run.results.iter().map(|r| r.bbox).collect::<Vec<_>>();
    assert_eq!(boxes(&on), boxes(&off));
}

#[test]
fn steps_stay_within_half_the_roi() {
    let seq = translating(&short(40), 40.0, (60.0, 60.0), (1.5, 0.7));
    let run = track(fixture(), &seq, &TrackerConfig::default());
    for w in run.results.windows(2) {
        let (a, b) = (w[0].bbox.center(), w[1].bbox.center());
        let half = 2.5 * w[0].bbox.w / 2.0;
        assert!((b.0 - a.0).abs() <= half && (b.1 - a.1).abs() <= half);
    }
}

#[test]
fn uniform_frame_ties_keep_the_unit_scale() {
    let features =
        BuiltinFeatures::new(BuiltinFeatureConfig { input_size: 32, cell_size: 2, channels: 16, ..Default::default() })
            .unwrap();
    let models = TrackerModels::single(lively(16, 1, 3));
    let frame = ImageFrame::filled(120, 90, 3, 120);
    let target = BoundingBox::new(40.0, 30.0, 20.0, 20.0);
    let mut cfg = TrackerConfig::default();
    cfg.adaptation.adapt_lr = 0.0;
    cfg.adaptation.n_keep = 8;
    let (mut st, _) = init(&frame, &target, &models, &features, &cfg).unwrap();
    let (best, searched) = st.scale_search(&frame, &features).unwrap();
    assert_eq!(searched.iter().map(|(f, _)| *f).collect::<Vec<_>>(), vec![1.0, 1.015, 1.0 / 1.015]);
    assert_eq!(best, 0);
    st.step(&frame, &features).unwrap();
    assert_eq!(st.scale, 1.0);
    assert_eq!(st.target, target);
}

#[test]
fn model_mismatch_is_rejected() {
    let features =
        BuiltinFeatures::new(BuiltinFeatureConfig { input_size: 32, cell_size: 2, channels: 16, ..Default::default() })
            .unwrap();
    let models = TrackerModels::single(AutoEncoderModel::zeros(8, 1).unwrap());
    let frame = ImageFrame::filled(64, 64, 3, 10);
    let err = init(&frame, &BoundingBox::new(10.0, 10.0, 20.0, 20.0), &models, &features, &TrackerConfig::default());
    assert!(matches!(err, Err(ctxtrack::Error::ShapeMismatch(_))));
}
