//! OTB-style sequence ingestion, per-frame result files, and one-pass
//! evaluation curves.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BoundingBox, ImageFrame};
use crate::tracker::FrameResult;

pub const PRECISION_THRESHOLDS: usize = 51;
pub const SUCCESS_THRESHOLDS: usize = 21;
/// Center-error threshold of the representative precision score, in pixels.
pub const PRECISION_AT: usize = 20;

const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "bmp", "ppm", "pgm"];

/// Frame paths and 0-based ground-truth boxes of one sequence.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub boxes: Vec<BoundingBox>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<ImageFrame> {
        ImageFrame::load(&self.frames[index])
    }
}

/// Parses one box per non-empty line; fields may be separated by commas,
/// tabs or spaces. Coordinates are converted from 1-based to 0-based.
pub fn parse_ground_truth(text: &str) -> Result<Vec<BoundingBox>> {
    let mut boxes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if fields.len() != 4 {
            return Err(Error::format(format!("ground truth line {}: expected 4 fields, got {}", n + 1, fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| Error::format(format!("ground truth line {}: bad number {f:?}", n + 1)))?;
        }
        boxes.push(BoundingBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]));
    }
    Ok(boxes)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Reads `dir/img/*` (sorted by file name) and `dir/groundtruth_rect.txt`.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
    let gt_path = dir.join("groundtruth_rect.txt");
    let text = fs::read_to_string(&gt_path).map_err(|e| Error::format(format!("{}: {e}", gt_path.display())))?;
    let boxes = parse_ground_truth(&text)?;
    let img_dir = dir.join("img");
    let mut frames: Vec<PathBuf> = match fs::read_dir(&img_dir) {
        Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_image(p)).collect(),
        Err(_) => Vec::new(),
    };
    frames.sort();
    if frames.len() != boxes.len() || frames.len() < 2 {
        return Err(Error::MissingFrames(format!("{name} ({} frames, {} boxes)", frames.len(), boxes.len())));
    }
    Ok(Sequence { name, frames, boxes })
}

fn check_lengths(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: gt.len() });
    }
    if pred.is_empty() {
        return Err(Error::format("no frames to evaluate"));
    }
    Ok(())
}

pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Fraction of frames with center error `<= t` for `t = 0, 1, .., 50` px.
pub fn precision_curve(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<Vec<f64>> {
    check_lengths(pred, gt)?;
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| center_error(p, g)).collect();
    let n = errors.len() as f64;
    Ok((0..PRECISION_THRESHOLDS).map(|t| errors.iter().filter(|&&e| e <= t as f64).count() as f64 / n).collect())
}

/// Overlap thresholds `0, 0.05, .., 1`.
pub fn success_thresholds() -> Vec<f64> {
    (0..SUCCESS_THRESHOLDS).map(|k| k as f64 / 20.0).collect()
}

/// Fraction of frames with IoU strictly above each threshold, and the mean
/// of those fractions.
pub fn success_curve(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, gt)?;
    let overlaps: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.iou(g)).collect();
    let n = overlaps.len() as f64;
    let curve: Vec<f64> =
        success_thresholds().into_iter().map(|t| overlaps.iter().filter(|&&o| o > t).count() as f64 / n).collect();
    let auc = curve.iter().sum::<f64>() / curve.len() as f64;
    Ok((curve, auc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurves {
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
    pub auc: f64,
}

impl EvalCurves {
    pub fn evaluate(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<Self> {
        let precision = precision_curve(pred, gt)?;
        let (success, auc) = success_curve(pred, gt)?;
        Ok(Self { precision, success, auc })
    }

    pub fn precision_at_20(&self) -> f64 {
        self.precision[PRECISION_AT]
    }

    /// Pointwise mean of per-sequence curves.
    pub fn average(curves: &[EvalCurves]) -> Option<EvalCurves> {
        let first = curves.first()?;
        let n = curves.len() as f64;
        let mean = |pick: fn(&EvalCurves) -> &Vec<f64>, len: usize| -> Vec<f64> {
            (0..len).map(|i| curves.iter().map(|c| pick(c)[i]).sum::<f64>() / n).collect()
        };
        Some(EvalCurves {
            precision: mean(|c| &c.precision, first.precision.len()),
            success: mean(|c| &c.success, first.success.len()),
            auc: curves.iter().map(|c| c.auc).sum::<f64>() / n,
        })
    }
}

/// Header of per-frame result files. Frame numbers and box corners are
/// 1-based like OTB ground truth.
pub const RESULT_HEADER: [&str; 7] = ["frame", "x", "y", "w", "h", "r_max", "occluded"];

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    frame: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    r_max: f64,
    occluded: u8,
}

pub fn write_results<W: std::io::Write>(results: &[FrameResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in results {
        out.serialize(ResultRow {
            frame: r.frame + 1,
            x: r.bbox.x + 1.0,
            y: r.bbox.y + 1.0,
            w: r.bbox.w,
            h: r.bbox.h,
            r_max: r.r_max,
            occluded: r.occluded as u8,
        })
        .map_err(|e| Error::format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_results(results: &[FrameResult], path: &Path) -> Result<()> {
    write_results(results, fs::File::create(path)?)
}

/// Reads a result file back as 0-based frame records.
pub fn read_results<R: std::io::Read>(r: R) -> Result<Vec<FrameResult>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(|e| Error::format(e.to_string()))?;
    if headers.iter().ne(RESULT_HEADER) {
        return Err(Error::format(format!("unexpected result header {headers:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<ResultRow>() {
        let row = row.map_err(|e| Error::format(e.to_string()))?;
        if row.frame == 0 {
            return Err(Error::format("frame numbers are 1-based"));
        }
        out.push(FrameResult {
            frame: row.frame - 1,
            bbox: BoundingBox::new(row.x - 1.0, row.y - 1.0, row.w, row.h),
            r_max: row.r_max,
            occluded: row.occluded != 0,
        });
    }
    Ok(out)
}

pub fn load_results(path: &Path) -> Result<Vec<FrameResult>> {
    read_results(fs::File::open(path)?)
}
