//! Image-text alignment difficulty from a warmed-up contrastive scorer.
//!
//! A linear two-tower model projects image and text embeddings into a shared
//! space, L2-normalizes them and scores every pair with a symmetric InfoNCE
//! loss (mean of the image→text and text→image cross-entropies, diagonal as
//! the positive). Each pair's loss is recorded with the freshly initialized
//! model (`l`) and again after a short full-batch warm-up (`l'`). The relative
//! change `α = (l' − l) / l` then sets the sample weight: pairs whose loss
//! rose are attenuated into `(0, 0.5]`, pairs whose loss fell or held are
//! boosted into `[1.5, 2)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, IngestError, SampleId};
use crate::rng::SeededRng;
use crate::stats::{median, sigmoid};

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("contrastive loss needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("projected {tower} vector of sample {id} has zero norm")]
    ZeroNorm { tower: &'static str, id: SampleId },
    #[error("model expects {expected} {tower} dims, data has {found}")]
    DimensionMismatch {
        tower: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite loss at warm-up step {step}")]
    Diverged { step: usize },
    #[error("loss variation undefined for l = {0}")]
    UndefinedRate(f64),
    #[error("non-finite alpha {alpha} for sample {id}")]
    NonFiniteAlpha { id: SampleId, alpha: f64 },
    #[error("no alphas to weight")]
    Empty,
    #[error("invalid model parameter: {0}")]
    InvalidParameter(&'static str),
}

/// One image-text pair as it appears in the paired-embeddings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextImagePair {
    pub id: SampleId,
    pub image_vector: Vec<f64>,
    pub text_vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedEmbeddingSet {
    dim_img: usize,
    dim_txt: usize,
    pairs: Vec<TextImagePair>,
}

impl PairedEmbeddingSet {
    pub fn new(pairs: Vec<TextImagePair>) -> Result<Self, IngestError> {
        Self::from_rows(pairs.into_iter().enumerate().map(|(i, p)| (i + 1, p)))
    }

    pub(crate) fn from_rows(
        rows: impl IntoIterator<Item = (usize, TextImagePair)>,
    ) -> Result<Self, IngestError> {
        let mut dims: Option<(usize, usize)> = None;
        let mut seen = HashSet::new();
        let mut pairs = Vec::new();
        for (line, p) in rows {
            ingest::check_id(line, &p.id, &mut seen)?;
            let (di, dt) = *dims.get_or_insert((p.image_vector.len(), p.text_vector.len()));
            for (expected, found) in [(di, p.image_vector.len()), (dt, p.text_vector.len())] {
                if expected == 0 || found != expected {
                    return Err(IngestError::DimensionMismatch {
                        line,
                        expected: expected.max(1),
                        found,
                    });
                }
            }
            ingest::check_finite(line, &p.image_vector)?;
            ingest::check_finite(line, &p.text_vector)?;
            pairs.push(p);
        }
        let (dim_img, dim_txt) = dims.ok_or(IngestError::Empty)?;
        Ok(Self {
            dim_img,
            dim_txt,
            pairs,
        })
    }

    pub fn dim_img(&self) -> usize {
        self.dim_img
    }

    pub fn dim_txt(&self) -> usize {
        self.dim_txt
    }

    pub fn pairs(&self) -> &[TextImagePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn image_matrix(&self) -> Array2<f64> {
        stack_rows(self.pairs.iter().map(|p| p.image_vector.as_slice()), self.dim_img)
    }

    fn text_matrix(&self) -> Array2<f64> {
        stack_rows(self.pairs.iter().map(|p| p.text_vector.as_slice()), self.dim_txt)
    }
}

fn stack_rows<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, dim: usize) -> Array2<f64> {
    let n = rows.len();
    let flat: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((n, dim), flat).expect("rows validated to a common dimension")
}

/// Linear image and text towers into a shared space of `shared_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTowerModel {
    /// `dim_img × shared_dim`
    pub proj_img: Array2<f64>,
    /// `dim_txt × shared_dim`
    pub proj_txt: Array2<f64>,
    pub temperature: f64,
}

impl TwoTowerModel {
    /// Entries drawn from N(0, 1/fan_in), image tower first, row-major.
    pub fn init(
        dim_img: usize,
        dim_txt: usize,
        shared_dim: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Self, AlignmentError> {
        if dim_img == 0 || dim_txt == 0 || shared_dim == 0 {
            return Err(AlignmentError::InvalidParameter("dimensions must be positive"));
        }
        let mut rng = SeededRng::new(seed);
        let mut draw = |rows: usize| {
            let scale = 1.0 / (rows as f64).sqrt();
            Array2::from_shape_simple_fn((rows, shared_dim), || rng.normal() * scale)
        };
        let proj_img = draw(dim_img);
        let proj_txt = draw(dim_txt);
        Self::new(proj_img, proj_txt, temperature)
    }

    pub fn new(
        proj_img: Array2<f64>,
        proj_txt: Array2<f64>,
        temperature: f64,
    ) -> Result<Self, AlignmentError> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(AlignmentError::InvalidParameter("temperature must be positive"));
        }
        if proj_img.ncols() != proj_txt.ncols() {
            return Err(AlignmentError::InvalidParameter("towers disagree on shared dim"));
        }
        if !proj_img.iter().chain(proj_txt.iter()).all(|v| v.is_finite()) {
            return Err(AlignmentError::InvalidParameter("non-finite projection entry"));
        }
        Ok(Self {
            proj_img,
            proj_txt,
            temperature,
        })
    }

    pub fn shared_dim(&self) -> usize {
        self.proj_img.ncols()
    }

    fn check_dims(&self, batch: &PairedEmbeddingSet) -> Result<(), AlignmentError> {
        for (tower, expected, found) in [
            ("image", self.proj_img.nrows(), batch.dim_img()),
            ("text", self.proj_txt.nrows(), batch.dim_txt()),
        ] {
            if expected != found {
                return Err(AlignmentError::DimensionMismatch {
                    tower,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }
}

/// Gradients of the mean batch loss with respect to both towers.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerGradients {
    pub proj_img: Array2<f64>,
    pub proj_txt: Array2<f64>,
}

struct Forward {
    x_img: Array2<f64>,
    x_txt: Array2<f64>,
    u: Array2<f64>,
    v: Array2<f64>,
    u_norm: Array1<f64>,
    v_norm: Array1<f64>,
    sim: Array2<f64>,
}

fn normalize_rows(
    m: &Array2<f64>,
    batch: &PairedEmbeddingSet,
    tower: &'static str,
) -> Result<(Array2<f64>, Array1<f64>), AlignmentError> {
    let norms = m.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|n| *n == 0.0 || !n.is_finite()) {
        return Err(AlignmentError::ZeroNorm {
            tower,
            id: batch.pairs()[i].id.clone(),
        });
    }
    let unit = m / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

fn forward(model: &TwoTowerModel, batch: &PairedEmbeddingSet) -> Result<Forward, AlignmentError> {
    if batch.len() < 2 {
        return Err(AlignmentError::BatchTooSmall(batch.len()));
    }
    model.check_dims(batch)?;
    let x_img = batch.image_matrix();
    let x_txt = batch.text_matrix();
    let (u, u_norm) = normalize_rows(&x_img.dot(&model.proj_img), batch, "image")?;
    let (v, v_norm) = normalize_rows(&x_txt.dot(&model.proj_txt), batch, "text")?;
    let sim = u.dot(&v.t()) / model.temperature;
    Ok(Forward {
        x_img,
        x_txt,
        u,
        v,
        u_norm,
        v_norm,
        sim,
    })
}

/// Row-wise softmax with max subtraction, plus each row's log-sum-exp.
fn softmax_rows(s: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut probs = s.to_owned();
    let mut lse = Array1::zeros(s.nrows());
    for (mut row, out) in probs.rows_mut().into_iter().zip(lse.iter_mut()) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let total = row.sum();
        row /= total;
        *out = max + total.ln();
    }
    (probs, lse)
}

fn losses_from(sim: &Array2<f64>) -> (Array1<f64>, Array2<f64>, Array2<f64>) {
    let (p_rows, lse_rows) = softmax_rows(sim.view());
    let (p_cols_t, lse_cols) = softmax_rows(sim.t());
    let diag = sim.diag();
    let losses = Array1::from_shape_fn(sim.nrows(), |i| {
        0.5 * ((lse_rows[i] - diag[i]) + (lse_cols[i] - diag[i]))
    });
    (losses, p_rows, p_cols_t.reversed_axes())
}

/// Symmetric contrastive loss of each pair, in batch order.
pub fn per_sample_loss(
    model: &TwoTowerModel,
    batch: &PairedEmbeddingSet,
) -> Result<Vec<(SampleId, f64)>, AlignmentError> {
    let fwd = forward(model, batch)?;
    let (losses, _, _) = losses_from(&fwd.sim);
    Ok(batch
        .pairs()
        .iter()
        .zip(losses)
        .map(|(p, l)| (p.id.clone(), l))
        .collect())
}

/// Mean batch loss and its analytic gradient.
pub fn loss_and_gradient(
    model: &TwoTowerModel,
    batch: &PairedEmbeddingSet,
) -> Result<(f64, TowerGradients), AlignmentError> {
    let fwd = forward(model, batch)?;
    let n = batch.len() as f64;
    let (losses, p_rows, p_cols) = losses_from(&fwd.sim);
    let loss = losses.mean().unwrap_or(0.0);

    // dL/dS = (P_row + P_col − 2I) / (2B)
    let mut g_sim = (&p_rows + &p_cols) / (2.0 * n);
    g_sim.diag_mut().mapv_inplace(|g| g - 1.0 / n);
    let g_u = g_sim.dot(&fwd.v) / model.temperature;
    let g_v = g_sim.t().dot(&fwd.u) / model.temperature;

    let through_norm = |g: Array2<f64>, unit: &Array2<f64>, norms: &Array1<f64>| {
        let radial = (&g * unit).sum_axis(Axis(1)).insert_axis(Axis(1));
        (g - unit * &radial) / norms.view().insert_axis(Axis(1))
    };
    let g_proj_u = through_norm(g_u, &fwd.u, &fwd.u_norm);
    let g_proj_v = through_norm(g_v, &fwd.v, &fwd.v_norm);
    Ok((
        loss,
        TowerGradients {
            proj_img: fwd.x_img.t().dot(&g_proj_u),
            proj_txt: fwd.x_txt.t().dot(&g_proj_v),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmupReport {
    pub model: TwoTowerModel,
    /// Mean loss before each step, then after the last one (`epochs + 1` entries).
    pub loss_curve: Vec<f64>,
    /// Steps whose update raised the mean loss; nonzero suggests `lr` is too high.
    pub increasing_steps: usize,
}

/// Full-batch gradient descent on the mean symmetric contrastive loss.
pub fn warmup(
    mut model: TwoTowerModel,
    data: &PairedEmbeddingSet,
    cfg: WarmupConfig,
) -> Result<WarmupReport, AlignmentError> {
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(AlignmentError::InvalidParameter("learning rate must be positive"));
    }
    if cfg.epochs == 0 {
        return Ok(WarmupReport {
            model,
            loss_curve: Vec::new(),
            increasing_steps: 0,
        });
    }
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    for step in 0..cfg.epochs {
        let (loss, grad) = loss_and_gradient(&model, data)?;
        if !loss.is_finite() {
            return Err(AlignmentError::Diverged { step });
        }
        curve.push(loss);
        model.proj_img.scaled_add(-cfg.lr, &grad.proj_img);
        model.proj_txt.scaled_add(-cfg.lr, &grad.proj_txt);
    }
    let (final_loss, _) = loss_and_gradient(&model, data)?;
    if !final_loss.is_finite() {
        return Err(AlignmentError::Diverged { step: cfg.epochs });
    }
    curve.push(final_loss);
    let increasing_steps = curve.windows(2).filter(|w| w[1] > w[0]).count();
    Ok(WarmupReport {
        model,
        loss_curve: curve,
        increasing_steps,
    })
}

/// `(l' − l) / l`.
pub fn loss_variation(l: f64, l_prime: f64) -> Result<f64, AlignmentError> {
    if l <= 0.0 || !l.is_finite() {
        return Err(AlignmentError::UndefinedRate(l));
    }
    Ok((l_prime - l) / l)
}

/// Adaptive weights for a list of loss variation rates, same order.
///
/// Positive rates are scaled by the median positive rate and mapped to
/// `1 − σ(α / med⁺)`; non-positive rates by the median of `−α` and mapped to
/// `1 + σ(−α / med⁻)`. A zero median only happens when every member of that
/// branch is zero, in which case the ratio is taken as 0.
pub fn adaptive_weights(alphas: &[f64]) -> Result<Vec<f64>, AlignmentError> {
    if alphas.is_empty() {
        return Err(AlignmentError::Empty);
    }
    let positive: Vec<f64> = alphas.iter().copied().filter(|a| *a > 0.0).collect();
    let negated: Vec<f64> = alphas.iter().filter(|a| **a <= 0.0).map(|a| -a).collect();
    let med_pos = median(&positive).unwrap_or(0.0);
    let med_neg = median(&negated).unwrap_or(0.0);
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    Ok(alphas
        .iter()
        .map(|&a| {
            if a > 0.0 {
                1.0 - sigmoid(ratio(a, med_pos))
            } else {
                1.0 + sigmoid(ratio(-a, med_neg))
            }
        })
        .collect())
}

pub fn sample_weights(
    alphas: &BTreeMap<SampleId, f64>,
) -> Result<BTreeMap<SampleId, f64>, AlignmentError> {
    if let Some((id, &alpha)) = alphas.iter().find(|(_, a)| !a.is_finite()) {
        return Err(AlignmentError::NonFiniteAlpha {
            id: id.clone(),
            alpha,
        });
    }
    let values: Vec<f64> = alphas.values().copied().collect();
    let weights = adaptive_weights(&values)?;
    Ok(alphas.keys().cloned().zip(weights).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub id: SampleId,
    pub l: f64,
    pub l_prime: f64,
    pub alpha: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentConfig {
    pub shared_dim: usize,
    pub temperature: f64,
    pub warmup: WarmupConfig,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            shared_dim: 32,
            temperature: 0.07,
            warmup: WarmupConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentScoring {
    pub scores: Vec<AlignmentScore>,
    pub warmup: WarmupReport,
}

/// Initialize from `cfg.seed`, measure `l`, warm up, measure `l'`, derive
/// rates and weights. Scores follow the input order.
pub fn score_alignment(
    data: &PairedEmbeddingSet,
    cfg: &AlignmentConfig,
) -> Result<AlignmentScoring, AlignmentError> {
    let model = TwoTowerModel::init(
        data.dim_img(),
        data.dim_txt(),
        cfg.shared_dim,
        cfg.temperature,
        cfg.seed,
    )?;
    let before = per_sample_loss(&model, data)?;
    let report = warmup(model, data, cfg.warmup)?;
    let after = per_sample_loss(&report.model, data)?;
    let alphas = before
        .iter()
        .zip(&after)
        .map(|((_, l), (_, lp))| loss_variation(*l, *lp))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = adaptive_weights(&alphas)?;
    let scores = before
        .into_iter()
        .zip(after)
        .zip(alphas.into_iter().zip(weights))
        .map(|(((id, l), (_, l_prime)), (alpha, weight))| AlignmentScore {
            id,
            l,
            l_prime,
            alpha,
            weight,
        })
        .collect();
    Ok(AlignmentScoring {
        scores,
        warmup: report,
    })
}

/// Easy-to-hard order: ascending post-warm-up loss, ties by id.
pub fn rank_by_alignment_difficulty(scores: &[AlignmentScore]) -> Vec<SampleId> {
    let mut order: Vec<&AlignmentScore> = scores.iter().collect();
    order.sort_by(|a, b| match a.l_prime.total_cmp(&b.l_prime) {
        Ordering::Equal => a.id.cmp(&b.id),
        o => o,
    });
    order.into_iter().map(|s| s.id.clone()).collect()
}

pub fn write_alignment_scores(path: &Path, scores: &[AlignmentScore]) -> Result<(), IngestError> {
    ingest::write_jsonl(path, None::<&()>, scores)
}

pub fn read_alignment_scores(path: &Path) -> Result<Vec<AlignmentScore>, IngestError> {
    let mut seen = HashSet::new();
    ingest::read_jsonl::<AlignmentScore>(path)?
        .into_iter()
        .map(|(line, s)| {
            ingest::check_id(line, &s.id, &mut seen)?;
            ingest::check_finite(line, &[s.l, s.l_prime, s.alpha, s.weight])?;
            Ok(s)
        })
        .collect()
}
