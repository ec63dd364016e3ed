//! Reference softmax classifier trained under a curriculum plan with the
//! per-sample weighted cross-entropy objective
//! `L = (1/N) Σ_i w_i · (−log p_{i, y_i})`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::CurriculumPlan;
use crate::ingest::{self, IngestError, SampleId};
use crate::rng::SeededRng;

pub type WeightMap = BTreeMap<SampleId, f64>;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("non-finite logits for sample {0}")]
    NonFiniteLogits(SampleId),
    #[error("no weight for sample {0}")]
    MissingWeight(SampleId),
    #[error("label {label} of sample {id} outside 0..{classes}")]
    LabelOutOfRange {
        id: SampleId,
        label: usize,
        classes: usize,
    },
    #[error("model expects {expected} features, sample {id} has {found}")]
    DimensionMismatch {
        id: SampleId,
        expected: usize,
        found: usize,
    },
    #[error("plan and data disagree: {0}")]
    PlanMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: SampleId,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    dim: usize,
    samples: Vec<LabeledSample>,
}

impl LabeledSet {
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self, IngestError> {
        Self::from_rows(samples.into_iter().enumerate().map(|(i, s)| (i + 1, s)))
    }

    pub(crate) fn from_rows(
        rows: impl IntoIterator<Item = (usize, LabeledSample)>,
    ) -> Result<Self, IngestError> {
        let mut dim = None;
        let mut seen = HashSet::new();
        let mut samples = Vec::new();
        for (line, s) in rows {
            ingest::check_id(line, &s.id, &mut seen)?;
            let expected = *dim.get_or_insert(s.features.len());
            if expected == 0 || s.features.len() != expected {
                return Err(IngestError::DimensionMismatch {
                    line,
                    expected: expected.max(1),
                    found: s.features.len(),
                });
            }
            ingest::check_finite(line, &s.features)?;
            samples.push(s);
        }
        let dim = dim.ok_or(IngestError::Empty)?;
        Ok(Self { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `max label + 1`.
    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }
}

/// Linear softmax classifier: `p = softmax(W·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    /// `classes × features`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SoftmaxModel {
    pub fn zeros(classes: usize, features: usize) -> Self {
        Self {
            weights: Array2::zeros((classes, features)),
            bias: Array1::zeros(classes),
        }
    }

    /// Weights from N(0, 0.01²), zero bias.
    pub fn seeded(classes: usize, features: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        Self {
            weights: Array2::from_shape_simple_fn((classes, features), || 0.01 * rng.normal()),
            bias: Array1::zeros(classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&x) + &self.bias
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        let z = self.logits(ArrayView1::from(features));
        // First maximum wins ties.
        z.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }

    fn check(&self, s: &LabeledSample) -> Result<(), TrainError> {
        if s.features.len() != self.features() {
            return Err(TrainError::DimensionMismatch {
                id: s.id.clone(),
                expected: self.features(),
                found: s.features.len(),
            });
        }
        if s.label >= self.classes() {
            return Err(TrainError::LabelOutOfRange {
                id: s.id.clone(),
                label: s.label,
                classes: self.classes(),
            });
        }
        Ok(())
    }

    /// Max-subtracted softmax and the unweighted cross-entropy of `s`.
    fn probs_and_loss(&self, s: &LabeledSample) -> Result<(Array1<f64>, f64), TrainError> {
        self.check(s)?;
        let z = self.logits(ArrayView1::from(s.features.as_slice()));
        if !z.iter().all(|v| v.is_finite()) {
            return Err(TrainError::NonFiniteLogits(s.id.clone()));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp = z.mapv(|v| (v - max).exp());
        let total = exp.sum();
        let loss = max + total.ln() - z[s.label];
        Ok((exp / total, loss))
    }
}

fn weight_of(weights: Option<&WeightMap>, id: &SampleId) -> Result<f64, TrainError> {
    match weights {
        None => Ok(1.0),
        Some(map) => map
            .get(id)
            .copied()
            .ok_or_else(|| TrainError::MissingWeight(id.clone())),
    }
}

/// Weighted mean cross-entropy over `batch`. `None` weights mean all ones.
pub fn weighted_ce_loss(
    model: &SoftmaxModel,
    batch: &[&LabeledSample],
    weights: Option<&WeightMap>,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in batch {
        let w = weight_of(weights, &s.id)?;
        total += w * model.probs_and_loss(s)?.1;
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxGradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Analytic gradient of [`weighted_ce_loss`]:
/// `(1/N) Σ_i w_i (p_i − y_i) ⊗ x_i` for `W`, without the outer product for `b`.
pub fn grad_weighted_ce(
    model: &SoftmaxModel,
    batch: &[&LabeledSample],
    weights: Option<&WeightMap>,
) -> Result<SoftmaxGradients, TrainError> {
    let mut gw = Array2::zeros(model.weights.raw_dim());
    let mut gb = Array1::zeros(model.classes());
    if batch.is_empty() {
        return Ok(SoftmaxGradients {
            weights: gw,
            bias: gb,
        });
    }
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        let w = weight_of(weights, &s.id)?;
        let (mut delta, _) = model.probs_and_loss(s)?;
        delta[s.label] -= 1.0;
        delta *= w * scale;
        let x = ArrayView1::from(s.features.as_slice());
        for (mut row, &d) in gw.rows_mut().into_iter().zip(delta.iter()) {
            row.scaled_add(d, &x);
        }
        gb += &delta;
    }
    Ok(SoftmaxGradients {
        weights: gw,
        bias: gb,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds [`TrainConfig::init_model`]; the sample stream itself is fixed by the plan.
    pub seed: u64,
    pub use_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 1,
            batch_size: 32,
            seed: 0,
            use_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn init_model(&self, classes: usize, features: usize) -> SoftmaxModel {
        SoftmaxModel::seeded(classes, features, self.seed)
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::InvalidConfig("lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Weighted loss over the whole training set after each epoch.
    pub loss_curve: Vec<f64>,
    /// Holdout accuracy if a holdout was given, else training accuracy.
    pub final_accuracy: f64,
}

/// Fraction of samples classified correctly, in `[0, 1]`.
pub fn accuracy(model: &SoftmaxModel, data: &LabeledSet) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .samples()
        .iter()
        .filter(|s| model.predict(&s.features) == s.label)
        .count();
    correct as f64 / data.len() as f64
}

/// SGD over the plan order, replayed every epoch, in consecutive batches of
/// `cfg.batch_size` (the last batch may be short).
pub fn train(
    mut model: SoftmaxModel,
    data: &LabeledSet,
    plan: &CurriculumPlan,
    weights: Option<&WeightMap>,
    cfg: &TrainConfig,
    holdout: Option<&LabeledSet>,
) -> Result<(SoftmaxModel, TrainReport), TrainError> {
    cfg.validate()?;
    let by_id: HashMap<&SampleId, &LabeledSample> =
        data.samples().iter().map(|s| (&s.id, s)).collect();
    if plan.order.len() != data.len() {
        return Err(TrainError::PlanMismatch(format!(
            "plan has {} ids, data has {}",
            plan.order.len(),
            data.len()
        )));
    }
    let stream = plan
        .ids()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| TrainError::PlanMismatch(format!("{id} not in data")))
        })
        .collect::<Result<Vec<&LabeledSample>, _>>()?;
    let weights = if cfg.use_weights { weights } else { None };
    if let Some(w) = weights {
        if let Some(s) = stream.iter().find(|s| !w.contains_key(&s.id)) {
            return Err(TrainError::MissingWeight(s.id.clone()));
        }
    }
    for s in &stream {
        model.check(s)?;
    }

    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for batch in stream.chunks(cfg.batch_size) {
            let g = grad_weighted_ce(&model, batch, weights)?;
            model.weights.scaled_add(-cfg.lr, &g.weights);
            model.bias.scaled_add(-cfg.lr, &g.bias);
        }
        loss_curve.push(weighted_ce_loss(&model, &stream, weights)?);
    }
    let final_accuracy = accuracy(&model, holdout.unwrap_or(data));
    Ok((
        model,
        TrainReport {
            loss_curve,
            final_accuracy,
        },
    ))
}

pub fn write_report(path: &Path, report: &TrainReport) -> std::io::Result<()> {
    let mut text = serde_json::to_string(report)?;
    text.push('\n');
    std::fs::write(path, text)
}
