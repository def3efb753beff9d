//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use ctxtrack::autoencoder::{multistage_loss, pretrain_base, train_expert, TrainConfig};
use ctxtrack::bench::{precision_curve, success_curve, success_thresholds, EvalCurves};
use ctxtrack::cf::{estimate_filter, response, FilterChannel};
use ctxtrack::context::{adjusted_rand_index, two_step_cluster, Descriptor, DEFAULT_INIT_TRIALS};
use ctxtrack::features::BoundingBox;
use ctxtrack::numerics::{fft2, gaussian_label, ifft2, FeatureMap, Plane};
use ctxtrack::synthetic::{occlusion, zoom, SceneConfig};
use ctxtrack::tracker::TrackerConfig;
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fft_oracle() -> Verdict {
    let t = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for h in 1..=16 {
        for w in 1..=16 {
            let p = random_plane(&mut r, w, h);
            worst = worst.max(max_abs_diff(fft2(&p).data(), &dft2_real(&p)));
            let s = random_symmetric_spectrum(&mut r, w, h);
            let oracle = dft2(s.data(), w, h, true);
            let inv = ifft2(&s).map_err(|e| e.to_string())?;
            for (a, b) in inv.data().iter().zip(&oracle) {
                worst = worst.max((a - b.re).abs().max(b.im.abs()));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(worst < 1e-6 && secs < 1.0, format!("max error {worst:.2e} in {secs:.3} s"))
}

fn max_err(a: &Plane, b: &Plane) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn cf_identities() -> Verdict {
    let y = gaussian_label(16, 1.6);
    let mut delta = Plane::zeros(16, 16);
    delta.set(0, 0, 1.0);
    let f = estimate_filter(&delta, &y, 0.0).map_err(|e| e.to_string())?;
    let exact = f.spectrum == fft2(&y);
    let mut r = rng(2);
    let mut train_err = 0.0f64;
    for _ in 0..10 {
        let z = random_plane(&mut r, 16, 16);
        let f = estimate_filter(&z, &y, 1e-10).map_err(|e| e.to_string())?;
        train_err = train_err.max(max_err(&response(&f, &z).map_err(|e| e.to_string())?.plane, &y));
    }
    let mut corr_err = 0.0f64;
    for s in 1..=16 {
        let z = random_plane(&mut r, s, s);
        let zp = random_plane(&mut r, s, s);
        let f = estimate_filter(&z, &gaussian_label(s, 0.08 * s as f64 + 0.5), 1.0).map_err(|e| e.to_string())?;
        let oracle = circular_correlation(&f.spatial().map_err(|e| e.to_string())?, &zp);
        corr_err = corr_err.max(max_err(&response(&f, &zp).map_err(|e| e.to_string())?.plane, &oracle));
    }
    ensure(
        exact && train_err < 1e-3 && corr_err < 1e-6,
        format!("delta exact {exact}, training identity {train_err:.2e}, correlation oracle {corr_err:.2e}"),
    )
}

fn gradient_suites() -> Verdict {
    let t = Instant::now();
    let (ae_params, ae) = (1..=3).map(ae_gradient_error).fold((0, 0.0f64), |(p, e), (q, f)| (p.max(q), e.max(f)));
    let (ad_params, ad) =
        (1..=3).map(adaptation_gradient_error).fold((0, 0.0f64), |(p, e), (q, f)| (p.max(q), e.max(f)));
    let secs = t.elapsed().as_secs_f64();
    ensure(
        ae < 1e-4 && ad < 1e-3 && ae_params <= 500 && ad_params <= 500 && secs < 30.0,
        format!("auto-encoder {ae:.2e} ({ae_params} params), adaptation {ad:.2e} ({ad_params} params), {secs:.2} s"),
    )
}

fn clustering() -> Verdict {
    // Three dense blobs of 20 and three sparse groups of 3 nearby. The
    // sparse groups form their own first-step clusters and are dropped.
    let n_e = 3;
    let mut r = rng(3);
    let centers = [[0.0, 0.0], [6.0, 0.0], [3.0, 5.0]];
    let outliers = [[-2.5, -2.5], [9.0, -2.0], [3.0, 8.5]];
    let tight = Normal::new(0.0, 0.2).unwrap();
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (group, (c, n)) in centers.iter().map(|c| (c, 20)).chain(outliers.iter().map(|c| (c, 3))).enumerate() {
        for _ in 0..n {
            pts.push(Descriptor(vec![c[0] + tight.sample(&mut r), c[1] + tight.sample(&mut r)]));
            truth.push(group % n_e);
        }
    }
    let model = two_step_cluster(&pts, n_e, DEFAULT_INIT_TRIALS, &mut r).map_err(|e| e.to_string())?;
    let blob_pts = 3 * 20;
    let ari = adjusted_rand_index(&model.assignments[..blob_pts], &truth[..blob_pts]).map_err(|e| e.to_string())?;
    let nonempty = model.sizes().iter().filter(|&&n| n > 0).count();
    let monotone = [&model.first_step_objective, &model.second_step_objective]
        .iter()
        .all(|h| h.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    ensure(
        model.centroids.len() == n_e && nonempty == n_e && ari >= 0.95 && monotone,
        format!("{nonempty} nonempty clusters, ARI {ari:.3}, Lloyd objective monotone {monotone}"),
    )
}

fn rank_two_cluster(r: &mut rand_chacha::ChaCha8Rng, loadings: &[[f64; 2]; 4], n: usize) -> Vec<FeatureMap> {
    (0..n)
        .map(|_| {
            let mut d = Vec::with_capacity(8 * 8 * 4);
            for _ in 0..64 {
                let u: [f64; 2] = [r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
                d.extend(loadings.iter().map(|a| (a[0] * u[0] + a[1] * u[1]) as f32));
            }
            FeatureMap::new(8, 8, 4, d).unwrap()
        })
        .collect()
}

fn ablation() -> Verdict {
    // Each cluster spans its own 2-D subspace of the 4 input channels; one
    // 2-channel code cannot cover both.
    let mut r = rng(4);
    let a = [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.0, 0.0]];
    let b = [[0.0, 0.0], [0.5, 0.0], [0.0, 1.0], [1.0, 0.3]];
    let clusters = [rank_two_cluster(&mut r, &a, 40), rank_two_cluster(&mut r, &b, 40)];
    let all: Vec<FeatureMap> = clusters.iter().flatten().cloned().collect();
    let base_cfg =
        TrainConfig { depth: 1, epochs: 20, learning_rate: 2e-4, batch_size: 10, seed: 5, ..Default::default() };
    let expert_cfg = TrainConfig::expert(&base_cfg);
    let base = pretrain_base(&all, &base_cfg).map_err(|e| e.to_string())?.model;
    let long_cfg = TrainConfig { epochs: base_cfg.epochs + expert_cfg.epochs, ..base_cfg.clone() };
    let long = pretrain_base(&all, &long_cfg).map_err(|e| e.to_string())?.model;
    let mut detail = Vec::new();
    let mut worst = f64::INFINITY;
    for (k, c) in clusters.iter().enumerate() {
        let expert = train_expert(&base, c, &expert_cfg).map_err(|e| e.to_string())?.model;
        let le = multistage_loss(&expert, c, c).map_err(|e| e.to_string())?;
        let lb = multistage_loss(&long, c, c).map_err(|e| e.to_string())?;
        let reduction = 1.0 - le / lb;
        worst = worst.min(reduction);
        detail.push(format!("cluster {k}: expert {le:.3} vs base {lb:.3} ({:.1}% lower)", 100.0 * reduction));
    }
    ensure(worst >= 0.20, detail.join("; "))
}

fn synthetic_tracking(fx: &TrackingFixture) -> Verdict {
    let cfg = TrackerConfig::default();
    let translate = track(fx, &translation_sequence(), &cfg);
    let mean = translate.errors.iter().sum::<f64>() / translate.errors.len() as f64;

    let grow = 1.015f64;
    let zs = zoom(&SceneConfig { frames: 31, ..Default::default() }, 40.0, (160.0, 120.0), grow);
    let zr = track(fx, &zs, &cfg);
    let est = zr.results.last().unwrap().bbox.w / zs.boxes[0].w;
    let truth = zs.boxes.last().unwrap().w / zs.boxes[0].w;
    let scale_err = (est / truth - 1.0).abs();

    let (hidden_from, hidden_to) = (30, 40);
    let os = occlusion(&SceneConfig::default(), 40.0, (140.0, 100.0), hidden_from..hidden_to);
    let or = track(fx, &os, &cfg);
    let window = &or.errors[hidden_to..(hidden_to + cfg.n_re).min(os.len())];
    let recovered = window.iter().position(|&e| e <= 5.0);
    let stays = recovered.is_some_and(|i| or.errors[hidden_to + i..].iter().all(|&e| e <= 5.0));

    ensure(
        mean <= 3.0 && scale_err <= 0.20 && stays,
        format!(
            "translation mean error {mean:.2} px; zoom scale {est:.3} vs {truth:.3} ({:.1}% off); occlusion recovered {}",
            100.0 * scale_err,
            match recovered {
                Some(i) if stays => format!("{i} frames after reappearing"),
                Some(i) => format!("after {i} frames but lost again"),
                None => "never".into(),
            }
        ),
    )
}

fn throughput(fx: &TrackingFixture) -> Verdict {
    let run = track(fx, &translation_sequence(), &TrackerConfig::default());
    let s = fx.models.base.compressed_channels();
    let mut r = rng(6);
    let planes: Vec<(FilterChannel, Plane)> = (0..run.kept_channels)
        .map(|_| {
            let z = random_plane(&mut r, 32, 32);
            (estimate_filter(&z, &gaussian_label(32, 1.6), 1.0).unwrap(), random_plane(&mut r, 32, 32))
        })
        .collect();
    let spatial: Vec<Plane> = planes.iter().map(|(f, _)| f.spatial().unwrap()).collect();
    let reps = 5;
    let t = Instant::now();
    for _ in 0..reps {
        for (f, zp) in &planes {
            std::hint::black_box(response(f, zp).unwrap());
        }
    }
    let fft_time = t.elapsed().as_secs_f64();
    let t = Instant::now();
    for _ in 0..reps {
        for (w, (_, zp)) in spatial.iter().zip(&planes) {
            std::hint::black_box(circular_correlation(w, zp));
        }
    }
    let spatial_time = t.elapsed().as_secs_f64();
    let speedup = spatial_time / fft_time;
    ensure(
        run.fps >= 100.0 && speedup >= 5.0 && run.kept_channels == 25 && s == 25,
        format!(
            "step {:.1} frames/s at S=32, N_c={}; FFT path {speedup:.0}x faster than spatial",
            run.fps, run.kept_channels
        ),
    )
}

fn random_box(r: &mut rand_chacha::ChaCha8Rng) -> BoundingBox {
    BoundingBox::new(
        r.random_range(0.0..80.0),
        r.random_range(0.0..80.0),
        r.random_range(5.0..40.0),
        r.random_range(5.0..40.0),
    )
}

fn metrics() -> Verdict {
    let mut r = rng(7);
    let mut mismatches = 0;
    for _ in 0..5 {
        let n = r.random_range(10..60);
        let gt: Vec<BoundingBox> = (0..n).map(|_| random_box(&mut r)).collect();
        let pred: Vec<BoundingBox> = gt
            .iter()
            .map(|g| {
                let b = random_box(&mut r);
                BoundingBox::new(g.x + (b.x - 40.0) * 0.5, g.y + (b.y - 40.0) * 0.5, b.w, b.h)
            })
            .collect();
        let p = precision_curve(&pred, &gt).map_err(|e| e.to_string())?;
        let (s, auc) = success_curve(&pred, &gt).map_err(|e| e.to_string())?;
        for (t, &v) in p.iter().enumerate() {
            let mut count = 0;
            for i in 0..n {
                let dx = (pred[i].x + pred[i].w / 2.0) - (gt[i].x + gt[i].w / 2.0);
                let dy = (pred[i].y + pred[i].h / 2.0) - (gt[i].y + gt[i].h / 2.0);
                if (dx * dx + dy * dy).sqrt() <= t as f64 {
                    count += 1;
                }
            }
            mismatches += (v != count as f64 / n as f64) as usize;
        }
        for (th, &v) in success_thresholds().iter().zip(&s) {
            let mut count = 0;
            for i in 0..n {
                let (a, b) = (&pred[i], &gt[i]);
                let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
                let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
                let inter = iw * ih;
                if inter / (a.w * a.h + b.w * b.h - inter) > *th {
                    count += 1;
                }
            }
            mismatches += (v != count as f64 / n as f64) as usize;
        }
        mismatches += (auc != s.iter().sum::<f64>() / s.len() as f64) as usize;
    }
    let gt: Vec<BoundingBox> = (0..20).map(|_| random_box(&mut r)).collect();
    let p20 = EvalCurves::evaluate(&gt, &gt).map_err(|e| e.to_string())?.precision_at_20();
    ensure(
        mismatches == 0 && p20 == 1.0,
        format!("{mismatches} oracle mismatches on 5 fixtures, precision@20 of pred=gt {p20}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, verdict: std::thread::Result<Verdict>| {
        let (pass, detail) = match verdict {
            Ok(Ok(d)) => (true, d),
            Ok(Err(d)) => (false, d),
            Err(_) => (false, "panicked".to_string()),
        };
        failed += !pass as usize;
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };
    report("FFT oracle equivalence", catch_unwind(fft_oracle));
    report("Correlation-filter identities", catch_unwind(cf_identities));
    report("Gradient suites", catch_unwind(gradient_suites));
    report("Clustering contract", catch_unwind(clustering));
    report("Ablation direction", catch_unwind(ablation));
    match catch_unwind(tracking_fixture) {
        Ok(fx) => {
            report("Synthetic tracking", catch_unwind(AssertUnwindSafe(|| synthetic_tracking(&fx))));
            report("Throughput sanity", catch_unwind(AssertUnwindSafe(|| throughput(&fx))));
        }
        Err(_) => {
            report("Synthetic tracking", Ok(Err("fixture pretraining panicked".into())));
            report("Throughput sanity", Ok(Err("fixture pretraining panicked".into())));
        }
    }
    report("Metrics", catch_unwind(metrics));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
