//! Region similarity (J), boundary accuracy (F) and their average, computed
//! per object and frame, then averaged per object, per sequence and across
//! sequences.

pub mod davis;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{LabelMap, Mask, MaskError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("{pred} predicted frames for {gt} ground-truth frames")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("sequence has no frames to evaluate")]
    NothingToEvaluate,
    #[error("ground-truth frames differ in size")]
    InconsistentSequence,
}

fn check_dims(a: &Mask, b: &Mask) -> Result<(), MaskError> {
    if a.dims() != b.dims() {
        return Err(MaskError::DimensionMismatch {
            left_w: a.width(),
            left_h: a.height(),
            right_w: b.width(),
            right_h: b.height(),
        });
    }
    Ok(())
}

pub fn jaccard(pred: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    let inter = pred.intersection_area(gt)?;
    let union = pred.union_area(gt)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Set pixels with at least one unset or out-of-frame 4-neighbor.
pub fn boundary(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    Mask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && (x == 0 || y == 0 || x + 1 == w || y + 1 == h || {
                !mask.get(x - 1, y) || !mask.get(x + 1, y) || !mask.get(x, y - 1) || !mask.get(x, y + 1)
            })
    })
    .expect("same dims as an existing mask")
}

/// `mask` grown by a Euclidean disc of radius `tol`.
pub fn dilate(mask: &Mask, tol: u32) -> Mask {
    let (w, h) = mask.dims();
    let r = tol as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut bits = vec![false; w as usize * h as usize];
    for (x, y) in mask.pixels() {
        for &(dx, dy) in &offsets {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                bits[ny as usize * w as usize + nx as usize] = true;
            }
        }
    }
    Mask::from_bits(w, h, bits).expect("same dims as an existing mask")
}

/// Default boundary tolerance: 0.8% of the image diagonal, rounded up.
pub fn default_tolerance(width: u32, height: u32) -> u32 {
    let diag = ((width as f64).powi(2) + (height as f64).powi(2)).sqrt();
    (0.008 * diag).ceil() as u32
}

pub fn boundary_f(pred: &Mask, gt: &Mask, tol: u32) -> Result<f64, MetricsError> {
    check_dims(pred, gt)?;
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (pb, gb) = (boundary(pred), boundary(gt));
    let precision = pb.intersection_area(&dilate(&gb, tol))? as f64 / pb.area() as f64;
    let recall = gb.intersection_area(&dilate(&pb, tol))? as f64 / gb.area() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    #[default]
    Auto,
    Pixels(u32),
}

impl Tolerance {
    pub fn resolve(self, width: u32, height: u32) -> u32 {
        match self {
            Tolerance::Auto => default_tolerance(width, height),
            Tolerance::Pixels(p) => p,
        }
    }
}

impl std::str::FromStr for Tolerance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Tolerance::Auto);
        }
        s.parse()
            .map(Tolerance::Pixels)
            .map_err(|_| format!("tolerance must be `auto` or a pixel count, got `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub tolerance: Tolerance,
    pub exclude_first: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tolerance: Tolerance::Auto,
            exclude_first: true,
        }
    }
}

/// Ground-truth label maps of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSequence {
    pub name: String,
    pub frames: Vec<LabelMap>,
    pub ids: Vec<u16>,
}

impl GroundTruthSequence {
    pub fn new(name: impl Into<String>, frames: Vec<LabelMap>) -> Result<Self, MetricsError> {
        if let Some(first) = frames.first() {
            if frames.iter().any(|f| f.dims() != first.dims()) {
                return Err(MetricsError::InconsistentSequence);
            }
        }
        let mut ids: Vec<u16> = frames.iter().flat_map(|f| f.ids()).collect();
        ids.sort_unstable();
        ids.dedup();
        Ok(Self {
            name: name.into(),
            frames,
            ids,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScores {
    pub id: u16,
    pub frames: Vec<usize>,
    pub j: Vec<f64>,
    pub f: Vec<f64>,
    pub mean_j: f64,
    pub mean_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequence: String,
    pub tolerance: u32,
    pub objects: Vec<ObjectScores>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub avg: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn evaluate(preds: &[LabelMap], gt: &GroundTruthSequence, opts: &EvalOptions) -> Result<EvalReport, MetricsError> {
    if preds.len() != gt.frames.len() {
        return Err(MetricsError::LengthMismatch {
            pred: preds.len(),
            gt: gt.frames.len(),
        });
    }
    let first = usize::from(opts.exclude_first);
    if gt.frames.len() <= first {
        return Err(MetricsError::NothingToEvaluate);
    }
    let (w, h) = gt.frames[0].dims();
    for p in preds {
        if p.dims() != (w, h) {
            let (pw, ph) = p.dims();
            return Err(MaskError::DimensionMismatch {
                left_w: pw,
                left_h: ph,
                right_w: w,
                right_h: h,
            }
            .into());
        }
    }
    let tol = opts.tolerance.resolve(w, h);
    let mut objects = Vec::with_capacity(gt.ids.len());
    for &id in &gt.ids {
        let mut s = ObjectScores {
            id,
            frames: Vec::new(),
            j: Vec::new(),
            f: Vec::new(),
            mean_j: 0.0,
            mean_f: 0.0,
        };
        for (t, (pred, truth)) in preds.iter().zip(&gt.frames).enumerate().skip(first) {
            let (pm, gm) = (pred.extract(id), truth.extract(id));
            s.frames.push(t);
            s.j.push(jaccard(&pm, &gm)?);
            s.f.push(boundary_f(&pm, &gm, tol)?);
        }
        s.mean_j = mean(&s.j);
        s.mean_f = mean(&s.f);
        objects.push(s);
    }
    let mean_j = mean(&objects.iter().map(|o| o.mean_j).collect::<Vec<_>>());
    let mean_f = mean(&objects.iter().map(|o| o.mean_f).collect::<Vec<_>>());
    Ok(EvalReport {
        sequence: gt.name.clone(),
        tolerance: tol,
        objects,
        mean_j,
        mean_f,
        avg: (mean_j + mean_f) / 2.0,
    })
}

/// Unweighted means over sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sequences: usize,
    pub mean_j: f64,
    pub mean_f: f64,
    pub avg: f64,
}

pub fn aggregate(reports: &[EvalReport]) -> Summary {
    let mean_j = mean(&reports.iter().map(|r| r.mean_j).collect::<Vec<_>>());
    let mean_f = mean(&reports.iter().map(|r| r.mean_f).collect::<Vec<_>>());
    Summary {
        sequences: reports.len(),
        mean_j,
        mean_f,
        avg: (mean_j + mean_f) / 2.0,
    }
}

/// Plain-text table with Avg, J and F columns, one row per sequence plus a
/// mean row. Scores are printed as percentages.
pub fn format_table(reports: &[EvalReport], summary: &Summary) -> String {
    let width = reports
        .iter()
        .map(|r| r.sequence.len())
        .chain(["sequence".len(), "mean".len()])
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}", "sequence", "Avg", "J", "F");
    let row = |out: &mut String, name: &str, avg: f64, j: f64, f: f64| {
        let _ = writeln!(out, "{name:<width$}  {:>6.1}  {:>6.1}  {:>6.1}", avg * 100.0, j * 100.0, f * 100.0);
    };
    for r in reports {
        row(&mut out, &r.sequence, r.avg, r.mean_j, r.mean_f);
    }
    row(&mut out, "mean", summary.avg, summary.mean_j, summary.mean_f);
    out
}

#[cfg(test)]
mod tests;
