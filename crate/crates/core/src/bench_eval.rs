//! Benchmark metrics for the nine infrared-text tasks.
//!
//! Accuracy (0-100) for scene, recognition, relationship, re-id and security;
//! mAP@0.5 (0-100, all-point interpolation) for grounding; mean absolute
//! error for location and both counting tasks. psum adds the six
//! higher-is-better scores, nsum the three error scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, BBox, IngestError, SampleId};
use crate::pairgen::{Answer, QaRecord};
use crate::task::{Metric, TaskKind};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction and truth ids differ: {0}")]
    IdMismatch(String),
    #[error("id {0} appears twice")]
    DuplicateId(SampleId),
    #[error("box {0:?} has zero area")]
    DegenerateBox([f64; 4]),
    #[error("prediction for {0} has no confidence")]
    MissingConfidence(SampleId),
    #[error("no ground-truth boxes")]
    NoGroundTruth,
    #[error("{id}: payload does not fit task {task}")]
    PayloadShape { id: SampleId, task: TaskKind },
    #[error("missing task {0}")]
    MissingTask(TaskKind),
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
}

/// Box in pixel units, `[x, y, w, h]` with top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    fn area(&self) -> f64 {
        self.w * self.h
    }

    fn as_array(&self) -> [f64; 4] {
        (*self).into()
    }
}

impl From<[f64; 4]> for Rect {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x, r.y, r.w, r.h]
    }
}

impl From<BBox> for Rect {
    fn from(b: BBox) -> Self {
        Rect::new(b.x as f64, b.y as f64, b.w as f64, b.h as f64)
    }
}

/// Intersection over union. Zero-area (or negative) boxes are rejected.
pub fn iou(a: &Rect, b: &Rect) -> Result<f64, EvalError> {
    for r in [a, b] {
        if !(r.w > 0.0 && r.h > 0.0) {
            return Err(EvalError::DegenerateBox(r.as_array()));
        }
    }
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    Ok(inter / (a.area() + b.area() - inter))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: Rect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Model output for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Text(String),
    Number(f64),
    Scored(Vec<ScoredBox>),
    Boxes(Vec<Rect>),
    Choices(Vec<String>),
}

impl Prediction {
    fn boxes(&self) -> Option<Vec<Rect>> {
        match self {
            Prediction::Boxes(b) => Some(b.clone()),
            Prediction::Scored(s) => Some(s.iter().map(|b| b.bbox).collect()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: SampleId,
    pub task: TaskKind,
    pub predicted: Prediction,
}

/// Pair predictions with truths by image id; both sides must cover the same ids.
fn match_by_id<'p, 't, P, T>(
    preds: &'p [P],
    truths: &'t [T],
    pred_id: impl Fn(&P) -> &SampleId,
    truth_id: impl Fn(&T) -> &SampleId,
) -> Result<Vec<(&'p P, &'t T)>, EvalError> {
    let mut by_id: HashMap<&SampleId, &T> = HashMap::with_capacity(truths.len());
    for t in truths {
        if by_id.insert(truth_id(t), t).is_some() {
            return Err(EvalError::DuplicateId(truth_id(t).clone()));
        }
    }
    if preds.len() != truths.len() {
        return Err(EvalError::IdMismatch(format!(
            "{} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut seen = BTreeSet::new();
    preds
        .iter()
        .map(|p| {
            let id = pred_id(p);
            if !seen.insert(id) {
                return Err(EvalError::DuplicateId(id.clone()));
            }
            by_id
                .get(id)
                .map(|t| (p, *t))
                .ok_or_else(|| EvalError::IdMismatch(format!("{id} has no truth")))
        })
        .collect()
}

fn is_correct(pred: &PredictionRecord, truth: &QaRecord) -> Result<bool, EvalError> {
    let shape_err = || EvalError::PayloadShape {
        id: pred.image_id.clone(),
        task: truth.task,
    };
    Ok(match (&truth.answer, &pred.predicted) {
        (Answer::Text(t), Prediction::Text(p)) => t == p,
        (Answer::Number(t), Prediction::Number(p)) => *t as f64 == *p,
        (Answer::Choices(t), Prediction::Choices(p)) => {
            t.iter().collect::<BTreeSet<_>>() == p.iter().collect::<BTreeSet<_>>()
        }
        (Answer::Choices(t), Prediction::Text(p)) => t.len() == 1 && t[0] == *p,
        _ => return Err(shape_err()),
    })
}

/// Percentage of exact matches. Multi-answer (security) items need set equality.
pub fn accuracy(preds: &[PredictionRecord], truths: &[QaRecord]) -> Result<f64, EvalError> {
    let pairs = match_by_id(preds, truths, |p| &p.image_id, |t| &t.image_id)?;
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut correct = 0usize;
    for (p, t) in &pairs {
        correct += usize::from(is_correct(p, t)?);
    }
    Ok(100.0 * correct as f64 / pairs.len() as f64)
}

/// Mean absolute error of positionally paired values.
pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch(preds.len(), truths.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / preds.len() as f64)
}

/// Error of one location answer: both box lists sorted by `(x, y, w, h)`,
/// paired by rank, unmatched boxes compared against an all-zero box; the
/// mean absolute coordinate difference over all paired coordinates.
pub fn location_error(pred: &[Rect], truth: &[Rect]) -> f64 {
    let sorted = |v: &[Rect]| {
        let mut v: Vec<[f64; 4]> = v.iter().map(Rect::as_array).collect();
        v.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        v
    };
    let (p, t) = (sorted(pred), sorted(truth));
    let n = p.len().max(t.len());
    if n == 0 {
        return 0.0;
    }
    let zero = [0.0; 4];
    let total: f64 = (0..n)
        .map(|i| {
            let a = p.get(i).unwrap_or(&zero);
            let b = t.get(i).unwrap_or(&zero);
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
        })
        .sum();
    total / (4 * n) as f64
}

fn mae_records(preds: &[PredictionRecord], truths: &[QaRecord]) -> Result<f64, EvalError> {
    let pairs = match_by_id(preds, truths, |p| &p.image_id, |t| &t.image_id)?;
    let mut errors = Vec::with_capacity(pairs.len());
    for (p, t) in pairs {
        let shape_err = || EvalError::PayloadShape {
            id: p.image_id.clone(),
            task: t.task,
        };
        let err = match (&t.answer, &p.predicted) {
            (Answer::Number(truth), Prediction::Number(pred)) => (pred - *truth as f64).abs(),
            (Answer::Boxes(truth), pred) => {
                let truth: Vec<Rect> = truth.iter().copied().map(Rect::from).collect();
                location_error(&pred.boxes().ok_or_else(shape_err)?, &truth)
            }
            _ => return Err(shape_err()),
        };
        errors.push(err);
    }
    mae(&errors, &vec![0.0; errors.len()])
}

/// Single-class average precision at IoU 0.5, ×100.
///
/// Predictions are ranked by descending confidence, ties by ascending image
/// id then box index. Each prediction claims the unmatched ground-truth box
/// in its image with the highest IoU, if that IoU is at least 0.5. AP is the
/// area under the all-point interpolated precision-recall curve.
pub fn map_at_50(
    preds: &BTreeMap<SampleId, Vec<ScoredBox>>,
    truths: &BTreeMap<SampleId, Vec<Rect>>,
) -> Result<f64, EvalError> {
    let total_gt: usize = truths.values().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut ranked: Vec<(f64, &SampleId, usize, &Rect)> = Vec::new();
    for (id, boxes) in preds {
        for (k, b) in boxes.iter().enumerate() {
            let conf = b
                .confidence
                .filter(|c| c.is_finite())
                .ok_or_else(|| EvalError::MissingConfidence(id.clone()))?;
            ranked.push((conf, id, k, &b.bbox));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));

    let mut claimed: HashMap<&SampleId, Vec<bool>> = truths
        .iter()
        .map(|(id, v)| (id, vec![false; v.len()]))
        .collect();
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for (_, id, _, pbox) in &ranked {
        let mut best: Option<(usize, f64)> = None;
        if let (Some(gts), Some(used)) = (truths.get(*id), claimed.get(*id)) {
            for (g, gt) in gts.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let o = iou(pbox, gt)?;
                if o >= 0.5 && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
        }
        if let Some((g, _)) = best {
            claimed.get_mut(*id).expect("image has truths")[g] = true;
        }
        tp_flags.push(best.is_some());
    }

    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, hit) in tp_flags.iter().enumerate() {
        tp += usize::from(*hit);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    // Precision envelope from the right, then sum over recall increments.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Ok(100.0 * ap)
}

/// Predictions and ground truth of one category, keyed by image.
pub type CategoryBoxes = (BTreeMap<SampleId, Vec<ScoredBox>>, BTreeMap<SampleId, Vec<Rect>>);

/// Mean of per-category AP; categories without ground truth are skipped.
pub fn map_at_50_by_category(per_category: &BTreeMap<String, CategoryBoxes>) -> Result<f64, EvalError> {
    let mut aps = Vec::new();
    for (preds, truths) in per_category.values() {
        match map_at_50(preds, truths) {
            Ok(ap) => aps.push(ap),
            Err(EvalError::NoGroundTruth) => {}
            Err(e) => return Err(e),
        }
    }
    if aps.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

fn grounding_map(preds: &[PredictionRecord], truths: &[QaRecord]) -> Result<f64, EvalError> {
    let pairs = match_by_id(preds, truths, |p| &p.image_id, |t| &t.image_id)?;
    let mut pmap = BTreeMap::new();
    let mut tmap = BTreeMap::new();
    for (p, t) in pairs {
        let shape_err = || EvalError::PayloadShape {
            id: p.image_id.clone(),
            task: t.task,
        };
        let gt: Vec<Rect> = match &t.answer {
            Answer::Box(b) => vec![(*b).into()],
            Answer::Boxes(bs) => bs.iter().copied().map(Rect::from).collect(),
            _ => return Err(shape_err()),
        };
        let scored = match &p.predicted {
            Prediction::Scored(s) => s.clone(),
            _ => return Err(shape_err()),
        };
        tmap.insert(t.image_id.clone(), gt);
        pmap.insert(p.image_id.clone(), scored);
    }
    map_at_50(&pmap, &tmap)
}

/// Score one task's predictions against its truth records.
pub fn evaluate_task(
    task: TaskKind,
    preds: &[PredictionRecord],
    truths: &[QaRecord],
) -> Result<f64, EvalError> {
    match task.metric() {
        Metric::Accuracy => accuracy(preds, truths),
        Metric::MapAt50 => grounding_map(preds, truths),
        Metric::Mae => mae_records(preds, truths),
    }
}

/// Group records by task and score every task that has truth records.
pub fn evaluate(
    preds: &[PredictionRecord],
    truths: &[QaRecord],
) -> Result<BTreeMap<TaskKind, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for task in TaskKind::ALL {
        let t: Vec<QaRecord> = truths.iter().filter(|r| r.task == task).cloned().collect();
        let p: Vec<PredictionRecord> = preds.iter().filter(|r| r.task == task).cloned().collect();
        if t.is_empty() && p.is_empty() {
            continue;
        }
        out.insert(task, evaluate_task(task, &p, &t)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub per_task: BTreeMap<TaskKind, f64>,
    pub psum: f64,
    pub nsum: f64,
}

pub fn aggregate(per_task: &BTreeMap<TaskKind, f64>) -> Result<BenchmarkReport, EvalError> {
    let mut psum = 0.0;
    let mut nsum = 0.0;
    for task in TaskKind::ALL {
        let v = *per_task.get(&task).ok_or(EvalError::MissingTask(task))?;
        if task.is_positive() {
            psum += v;
        } else {
            nsum += v;
        }
    }
    Ok(BenchmarkReport {
        per_task: per_task.clone(),
        psum,
        nsum,
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, IngestError> {
    Ok(ingest::read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn read_truths(path: &Path) -> Result<Vec<QaRecord>, IngestError> {
    Ok(ingest::read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Per-task metric values as a single JSON object keyed by task name.
pub fn read_per_task(path: &Path) -> Result<BTreeMap<TaskKind, f64>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| IngestError::Malformed {
        line: e.line(),
        message: e.to_string(),
    })
}
