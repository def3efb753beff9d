use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use ctxtrack::autoencoder::{load_model, pretrain_base, save_model, train_expert, AutoEncoderModel};
use ctxtrack::bench::{load_results, load_sequence, save_results, EvalCurves};
use ctxtrack::context::{
    accuracy, load_context, make_descriptor, save_context, train_selector, two_step_cluster, ContextModel,
};
use ctxtrack::features::{
    extract_roi, load_fmap, save_fmap, BoundingBox, BuiltinFeatures, FeatureSource, PrecomputedFeatures,
};
use ctxtrack::numerics::FeatureMap;
use ctxtrack::synthetic::{self, SceneConfig};
use ctxtrack::tracker::{init, TrackerModels};
use ctxtrack::PipelineConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult, Context, EXIT_NAME_MISMATCH};

pub const BASE_FILE: &str = "base.aemd";
pub const CONTEXT_FILE: &str = "context.ctxm";
pub const ASSIGNMENT_FILE: &str = "assignments.csv";

pub fn expert_file(k: usize) -> String {
    format!("expert_{:02}.aemd", k + 1)
}

/// Where tracking features come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMode {
    Builtin,
    /// Whole-frame FMAP files named after the frame images.
    Fmap(PathBuf),
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "builtin" => Ok(FeatureMode::Builtin),
            _ => match s.strip_prefix("fmap:") {
                Some(dir) if !dir.is_empty() => Ok(FeatureMode::Fmap(PathBuf::from(dir))),
                _ => Err(format!("expected `builtin` or `fmap:<dir>`, got {s:?}")),
            },
        }
    }
}

/// Loads the config file (or defaults), then applies `key=value` overrides.
/// Values are parsed as TOML, falling back to a bare string.
pub fn load_config(path: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> CliResult<PipelineConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut doc: toml::Table = toml::from_str(&text).map_err(|e| CliError::input(format!("config: {e}")))?;
    for item in overrides {
        let (key, raw) =
            item.split_once('=').ok_or_else(|| CliError::input(format!("override {item:?} is not key=value")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut parts: Vec<&str> = key.trim().split('.').collect();
        let leaf = parts.pop().unwrap_or_default();
        let mut table = &mut doc;
        for p in parts {
            table = table
                .entry(p)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| CliError::input(format!("override {key:?}: {p} is not a table")))?;
        }
        table.insert(leaf.to_string(), value);
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| CliError::input("seed must fit in a signed 64-bit integer"))?;
        doc.insert("seed".into(), toml::Value::Integer(s));
    }
    PipelineConfig::from_toml(&doc.to_string()).map_err(|e| CliError::input(format!("config: {e}")))
}

fn list_files(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    out.sort();
    Ok(out)
}

fn load_samples(dir: &Path) -> CliResult<(Vec<PathBuf>, Vec<FeatureMap>)> {
    let paths = list_files(dir, "fmap")?;
    if paths.is_empty() {
        return Err(CliError::input(format!("no samples in {}", dir.display())));
    }
    let maps = paths.iter().map(|p| load_fmap(p).ctx(p.display())).collect::<CliResult<Vec<_>>>()?;
    Ok((paths, maps))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))
}

fn loss_line(losses: &[f64]) -> String {
    losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(" ")
}

pub fn cmd_pretrain(feature_dir: &Path, out_model: &Path, cfg: &PipelineConfig) -> CliResult<()> {
    let (_, samples) = load_samples(feature_dir)?;
    println!("pretraining on {} samples of shape {:?}", samples.len(), samples[0].shape());
    let outcome = pretrain_base(&samples, &cfg.base_train()).ctx("pretraining")?;
    println!("epoch losses: {}", loss_line(&outcome.epoch_losses));
    save_model(&outcome.model, out_model).ctx(out_model.display())?;
    println!("wrote {}", out_model.display());
    Ok(())
}

pub fn cmd_train_experts(feature_dir: &Path, base_model: &Path, out_dir: &Path, cfg: &PipelineConfig) -> CliResult<()> {
    let (paths, samples) = load_samples(feature_dir)?;
    let base = load_model(base_model).ctx(base_model.display())?;
    let descriptors = samples
        .iter()
        .map(|x| base.compress(x).map(|z| make_descriptor(&z)))
        .collect::<ctxtrack::Result<Vec<_>>>()
        .ctx("computing descriptors")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.cluster_seed());
    let clusters = two_step_cluster(&descriptors, cfg.n_experts, cfg.init_trials, &mut rng).ctx("clustering")?;
    println!("cluster sizes: {:?}", clusters.sizes());

    create_dir(out_dir)?;
    let expert_cfg = cfg.expert_train();
    for k in 0..clusters.clusters() {
        let members: Vec<FeatureMap> = clusters.members(k).into_iter().map(|i| samples[i].clone()).collect();
        let model = if members.is_empty() {
            base.clone()
        } else {
            let cfg_k = ctxtrack::autoencoder::TrainConfig {
                seed: expert_cfg.seed.wrapping_add(k as u64),
                ..expert_cfg.clone()
            };
            let outcome = train_expert(&base, &members, &cfg_k).ctx(format!("expert {}", k + 1))?;
            println!("expert {} ({} samples): {}", k + 1, members.len(), loss_line(&outcome.epoch_losses));
            outcome.model
        };
        let path = out_dir.join(expert_file(k));
        save_model(&model, &path).ctx(path.display())?;
    }

    let (selector, _) =
        train_selector(&descriptors, &clusters.assignments, clusters.clusters(), &cfg.selector()).ctx("selector")?;
    let acc = accuracy(&selector, &descriptors, &clusters.assignments).ctx("selector")?;
    let majority = *clusters.sizes().iter().max().unwrap_or(&0) as f64 / samples.len() as f64;
    println!("selector training accuracy {acc:.4} (largest-cluster baseline {majority:.4})");

    let context = ContextModel::new(clusters.centroids.clone(), selector).ctx("context model")?;
    let ctx_path = out_dir.join(CONTEXT_FILE);
    save_context(&context, &ctx_path).ctx(ctx_path.display())?;
    let base_path = out_dir.join(BASE_FILE);
    save_model(&base, &base_path).ctx(base_path.display())?;

    let mut csv = String::from("sample,file,cluster\n");
    for (i, (p, a)) in paths.iter().zip(&clusters.assignments).enumerate() {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        csv.push_str(&format!("{},{},{}\n", i + 1, name, a + 1));
    }
    let csv_path = out_dir.join(ASSIGNMENT_FILE);
    fs::write(&csv_path, csv).map_err(|e| CliError::input(format!("{}: {e}", csv_path.display())))?;
    println!(
        "wrote {} experts, {} and {} to {}",
        clusters.clusters(),
        CONTEXT_FILE,
        ASSIGNMENT_FILE,
        out_dir.display()
    );
    Ok(())
}

/// Loads `base.aemd` and, when `context.ctxm` is present, the experts.
pub fn load_models(dir: &Path) -> CliResult<TrackerModels> {
    let base_path = dir.join(BASE_FILE);
    let base = load_model(&base_path).ctx(base_path.display())?;
    let ctx_path = dir.join(CONTEXT_FILE);
    if !ctx_path.exists() {
        return Ok(TrackerModels::single(base));
    }
    let context = load_context(&ctx_path).ctx(ctx_path.display())?;
    let experts = (0..context.experts())
        .map(|k| {
            let p = dir.join(expert_file(k));
            load_model(&p).ctx(p.display())
        })
        .collect::<CliResult<Vec<AutoEncoderModel>>>()?;
    TrackerModels::new(base, experts, context).ctx("models")
}

enum Source {
    Builtin(BuiltinFeatures),
    Fmap { dir: PathBuf, features: PrecomputedFeatures },
}

impl Source {
    fn features(&self) -> &dyn FeatureSource {
        match self {
            Source::Builtin(b) => b,
            Source::Fmap { features, .. } => features,
        }
    }
}

fn frame_fmap(dir: &Path, frame: &Path) -> PathBuf {
    let stem = frame.file_stem().unwrap_or_default();
    dir.join(stem).with_extension("fmap")
}

pub fn cmd_track(
    sequence_dir: &Path,
    models_dir: &Path,
    out_csv: &Path,
    mode: &FeatureMode,
    cfg: &PipelineConfig,
) -> CliResult<()> {
    let seq = load_sequence(sequence_dir).map_err(|e| CliError::sequence(sequence_dir.display(), e))?;
    let models = load_models(models_dir)?;
    let fcfg = cfg.builtin_features();
    let source = match mode {
        FeatureMode::Builtin => Source::Builtin(BuiltinFeatures::new(fcfg).ctx("features")?),
        FeatureMode::Fmap(dir) => {
            let first = frame_fmap(dir, &seq.frames[0]);
            let map = load_fmap(&first).map_err(|e| CliError::sequence(first.display(), e))?;
            let size = fcfg.feature_size().ctx("features")?;
            let features = PrecomputedFeatures::new(fcfg.input_size, size, map.channels());
            Source::Fmap { dir: dir.clone(), features }
        }
    };
    let tracker_cfg = cfg.tracker();
    let mut results = Vec::with_capacity(seq.len());
    let mut busy = Duration::ZERO;
    let mut state = None;
    for i in 0..seq.len() {
        let frame = seq.frame(i).map_err(|e| CliError::sequence(seq.frames[i].display(), e))?;
        if let Source::Fmap { dir, features } = &source {
            let p = frame_fmap(dir, &seq.frames[i]);
            let map = load_fmap(&p).map_err(|e| CliError::sequence(p.display(), e))?;
            features.set_frame(map, frame.width(), frame.height()).map_err(|e| CliError::sequence(p.display(), e))?;
        }
        let t = Instant::now();
        let record = match state.as_mut() {
            None => {
                let (st, first) = init(&frame, &seq.boxes[0], &models, source.features(), &tracker_cfg).ctx("init")?;
                state = Some(st);
                first
            }
            Some(st) => st.step(&frame, source.features()).ctx(format!("frame {}", i + 1))?,
        };
        if i > 0 {
            busy += t.elapsed();
        }
        results.push(record);
    }
    save_results(&results, out_csv).ctx(out_csv.display())?;
    let steps = (seq.len() - 1) as f64;
    let fps = if busy.is_zero() { f64::INFINITY } else { steps / busy.as_secs_f64() };
    let expert = state.and_then(|s| s.expert_index).map_or("base".to_string(), |k| format!("expert {}", k + 1));
    println!("{}: {} frames with {expert}, mean {fps:.1} fps", seq.name, seq.len());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SequenceReport {
    pub name: String,
    pub precision_at_20: f64,
    #[serde(flatten)]
    pub curves: EvalCurves,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceReport>,
    pub average: EvalCurves,
    pub precision_at_20: f64,
    pub auc: f64,
}

pub fn cmd_eval(results_dir: &Path, sequences_dir: &Path, out_json: &Path) -> CliResult<()> {
    let files = list_files(results_dir, "csv")?;
    if files.is_empty() {
        return Err(CliError::input(format!("no result files in {}", results_dir.display())));
    }
    let mut sequences = Vec::new();
    for f in &files {
        let name = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let dir = sequences_dir.join(&name);
        if !dir.is_dir() {
            return Err(CliError::new(
                EXIT_NAME_MISMATCH,
                format!("no sequence named {name} in {}", sequences_dir.display()),
            ));
        }
        let seq = load_sequence(&dir).map_err(|e| CliError::sequence(dir.display(), e))?;
        let pred: Vec<BoundingBox> = load_results(f).ctx(f.display())?.into_iter().map(|r| r.bbox).collect();
        let curves = EvalCurves::evaluate(&pred, &seq.boxes).ctx(&name)?;
        println!("{name}: precision@20 {:.4}, AUC {:.4}", curves.precision_at_20(), curves.auc);
        sequences.push(SequenceReport { name, precision_at_20: curves.precision_at_20(), curves });
    }
    let all: Vec<EvalCurves> = sequences.iter().map(|s| s.curves.clone()).collect();
    let average = EvalCurves::average(&all).expect("at least one sequence");
    let report = EvalReport { precision_at_20: average.precision_at_20(), auc: average.auc, average, sequences };
    println!(
        "average over {}: precision@20 {:.4}, AUC {:.4}",
        report.sequences.len(),
        report.precision_at_20,
        report.auc
    );
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::input(e.to_string()))?;
    fs::write(out_json, text).map_err(|e| CliError::input(format!("{}: {e}", out_json.display())))?;
    Ok(())
}

/// Sequence directories (containing ground truth) directly under `root`,
/// or `root` itself when it is one.
fn sequence_dirs(root: &Path) -> CliResult<Vec<PathBuf>> {
    if root.join("groundtruth_rect.txt").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = fs::read_dir(root).map_err(|e| CliError::input(format!("{}: {e}", root.display())))?;
    let mut dirs: Vec<PathBuf> =
        entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("groundtruth_rect.txt").is_file()).collect();
    dirs.sort();
    Ok(dirs)
}

/// Writes built-in feature maps of jittered ground-truth ROIs as FMAP
/// training samples.
pub fn cmd_samples(sequences: &Path, out_dir: &Path, per_sequence: usize, cfg: &PipelineConfig) -> CliResult<()> {
    let dirs = sequence_dirs(sequences)?;
    if dirs.is_empty() {
        return Err(CliError::new(crate::error::EXIT_SEQUENCE, format!("no sequences under {}", sequences.display())));
    }
    let features = BuiltinFeatures::new(cfg.builtin_features()).ctx("features")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    create_dir(out_dir)?;
    let mut written = 0;
    for dir in &dirs {
        let seq = load_sequence(dir).map_err(|e| CliError::sequence(dir.display(), e))?;
        for j in 0..per_sequence {
            let i = j * seq.len() / per_sequence.max(1);
            let frame = seq.frame(i).map_err(|e| CliError::sequence(seq.frames[i].display(), e))?;
            let b = seq.boxes[i];
            let (cx, cy) = b.center();
            let jitter = |r: &mut ChaCha8Rng| r.random_range(-0.25..0.25);
            let s = rng.random_range(0.9..1.1);
            let bb =
                BoundingBox::from_center(cx + jitter(&mut rng) * b.w, cy + jitter(&mut rng) * b.h, b.w * s, b.h * s);
            let patch = extract_roi(&frame, &bb, cfg.roi_factor, features.input_size()).ctx(format!(
                "{} frame {}",
                seq.name,
                i + 1
            ))?;
            let map = features.extract(&patch).ctx("features")?;
            let path = out_dir.join(format!("{}_{:04}_{:02}.fmap", seq.name, i + 1, j));
            save_fmap(&map, &path).ctx(path.display())?;
            written += 1;
        }
    }
    println!("wrote {written} samples from {} sequences to {}", dirs.len(), out_dir.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    Translate,
    Zoom,
    Occlusion,
}

/// Renders one procedural sequence in OTB layout.
pub fn cmd_synth(out_dir: &Path, kind: SynthKind, frames: usize, seed: u64) -> CliResult<()> {
    if frames < 2 {
        return Err(CliError::input("a sequence needs at least 2 frames"));
    }
    let scene = SceneConfig { frames, seed, ..Default::default() };
    let seq = match kind {
        SynthKind::Translate => synthetic::translating(&scene, 40.0, (60.0, 60.0), (1.5, 0.7)),
        SynthKind::Zoom => synthetic::zoom(&scene, 40.0, (160.0, 120.0), 1.015),
        SynthKind::Occlusion => synthetic::occlusion(&scene, 40.0, (140.0, 100.0), frames * 3 / 10..frames * 4 / 10),
    };
    seq.write_otb(out_dir).ctx(out_dir.display())?;
    println!("wrote {} frames to {}", seq.len(), out_dir.display());
    Ok(())
}
