//! Infrared-to-visible transfer difficulty from kernel mean embeddings.
//!
//! Each domain is summarized by its kernel mean embedding (its center in the
//! RKHS of the kernel). The domain gap is the maximum mean discrepancy
//! between the two centers, computed with the biased V-statistic so that it
//! equals the RKHS distance between the empirical centers exactly. Each
//! infrared sample is then scored by projecting its offset from the infrared
//! center onto the unit direction from the infrared center to the visible
//! center, plus the domain gap:
//!
//! ```text
//! projection_i = (⟨φ(x_i), c_vis⟩ − ⟨φ(x_i), c_ir⟩ − ⟨c_ir, c_vis⟩ + ‖c_ir‖²) / mmd
//! d_i          = projection_i + mmd
//! ```
//!
//! Every inner product is a mean of kernel evaluations, so the feature map is
//! never materialized. Rows are accumulated in fixed index order, which keeps
//! results bit-identical regardless of the rayon thread count.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, Domain, EmbeddingSet, IngestError, SampleId};

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("median bandwidth needs at least two samples")]
    TooFewSamples,
    #[error("every pairwise distance is zero; bandwidth undefined")]
    DegenerateSet,
    #[error("no {0} samples")]
    EmptyDomain(Domain),
    #[error("domains indistinguishable (mmd {mmd:e} <= epsilon {epsilon:e})")]
    IndistinguishableDomains { mmd: f64, epsilon: f64 },
}

/// A positive-semidefinite kernel on dense vectors.
pub trait Kernel: Sync {
    /// Caller guarantees equal lengths.
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    bandwidth: f64,
    inv_two_sigma_sq: f64,
}

impl GaussianKernel {
    pub fn new(bandwidth: f64) -> Result<Self, KernelError> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(KernelError::InvalidBandwidth(bandwidth));
        }
        Ok(Self {
            bandwidth,
            inv_two_sigma_sq: 1.0 / (2.0 * bandwidth * bandwidth),
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl Kernel for GaussianKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (-squared_distance(x, y) * self.inv_two_sigma_sq).exp()
    }
}

/// `k(x, y) = x · y`. Its feature map is the identity, which makes it the
/// reference for checking the kernel-trick algebra against explicit vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinearKernel;

impl Kernel for LinearKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
    pub epsilon: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::MedianHeuristic,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl KernelConfig {
    pub fn fixed(bandwidth: f64) -> Self {
        Self {
            bandwidth: Bandwidth::Fixed(bandwidth),
            ..Self::default()
        }
    }

    /// Build the Gaussian kernel, running the median heuristic if requested.
    pub fn resolve(&self, set: &EmbeddingSet) -> Result<GaussianKernel, KernelError> {
        match self.bandwidth {
            Bandwidth::Fixed(b) => GaussianKernel::new(b),
            Bandwidth::MedianHeuristic => GaussianKernel::new(median_bandwidth(set)?),
        }
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(−‖x−y‖² / (2·bandwidth²))`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> Result<f64, KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::DimensionMismatch(x.len(), y.len()));
    }
    Ok(GaussianKernel::new(bandwidth)?.eval(x, y))
}

/// Median of all nonzero pairwise Euclidean distances, over both domains.
pub fn median_bandwidth(set: &EmbeddingSet) -> Result<f64, KernelError> {
    let vectors: Vec<&[f64]> = set.samples().iter().map(|s| s.vector.as_slice()).collect();
    median_pairwise_distance(&vectors)
}

pub(crate) fn median_pairwise_distance(vectors: &[&[f64]]) -> Result<f64, KernelError> {
    if vectors.len() < 2 {
        return Err(KernelError::TooFewSamples);
    }
    let mut distances: Vec<f64> = (0..vectors.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = vectors[i];
            vectors[i + 1..]
                .iter()
                .map(move |xj| squared_distance(xi, xj).sqrt())
        })
        .filter(|d| *d > 0.0)
        .collect();
    if distances.is_empty() {
        return Err(KernelError::DegenerateSet);
    }
    let mid = distances.len() / 2;
    let (_, upper, _) = distances.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if distances.len() % 2 == 1 {
        Ok(upper)
    } else {
        let lower = distances[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower + upper))
    }
}

/// Kernel mean embeddings of the two domains, described by their inner products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainGeometry {
    /// ‖c_ir‖²
    pub gram_ir_ir_mean: f64,
    /// ‖c_vis‖²
    pub gram_vis_vis_mean: f64,
    /// ⟨c_ir, c_vis⟩
    pub gram_cross_mean: f64,
    pub mmd: f64,
}

impl DomainGeometry {
    fn from_means(ir_ir: f64, vis_vis: f64, cross: f64) -> Self {
        let mmd_sq = ir_ir + vis_vis - 2.0 * cross;
        Self {
            gram_ir_ir_mean: ir_ir,
            gram_vis_vis_mean: vis_vis,
            gram_cross_mean: cross,
            mmd: mmd_sq.max(0.0).sqrt(),
        }
    }

    /// Unclamped V-statistic.
    pub fn mmd_squared(&self) -> f64 {
        self.gram_ir_ir_mean + self.gram_vis_vis_mean - 2.0 * self.gram_cross_mean
    }
}

/// Per-row kernel means for the infrared samples against each domain.
struct RowMeans {
    to_ir: Vec<f64>,
    to_vis: Vec<f64>,
}

fn mean_row<K: Kernel>(kernel: &K, x: &[f64], others: &[&[f64]]) -> f64 {
    others.iter().map(|y| kernel.eval(x, y)).sum::<f64>() / others.len() as f64
}

fn split_domains(set: &EmbeddingSet) -> Result<(Vec<&[f64]>, Vec<&[f64]>), KernelError> {
    let ir: Vec<&[f64]> = set
        .domain(Domain::Infrared)
        .map(|s| s.vector.as_slice())
        .collect();
    let vis: Vec<&[f64]> = set
        .domain(Domain::Visible)
        .map(|s| s.vector.as_slice())
        .collect();
    if ir.is_empty() {
        return Err(KernelError::EmptyDomain(Domain::Infrared));
    }
    if vis.is_empty() {
        return Err(KernelError::EmptyDomain(Domain::Visible));
    }
    Ok((ir, vis))
}

fn geometry_parts<K: Kernel>(
    kernel: &K,
    ir: &[&[f64]],
    vis: &[&[f64]],
) -> (DomainGeometry, RowMeans) {
    let to_ir: Vec<f64> = ir.par_iter().map(|x| mean_row(kernel, x, ir)).collect();
    let to_vis: Vec<f64> = ir.par_iter().map(|x| mean_row(kernel, x, vis)).collect();
    let vis_rows: Vec<f64> = vis.par_iter().map(|x| mean_row(kernel, x, vis)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let geometry = DomainGeometry::from_means(mean(&to_ir), mean(&vis_rows), mean(&to_vis));
    (geometry, RowMeans { to_ir, to_vis })
}

/// Kernel mean inner products and the biased MMD between the domains.
pub fn domain_geometry<K: Kernel>(
    set: &EmbeddingSet,
    kernel: &K,
) -> Result<DomainGeometry, KernelError> {
    let (ir, vis) = split_domains(set)?;
    Ok(geometry_parts(kernel, &ir, &vis).0)
}

/// Per-infrared-sample projection score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualScore {
    pub id: SampleId,
    pub projection: f64,
    pub d: f64,
}

/// Domain geometry together with the scores it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualScoring {
    pub geometry: DomainGeometry,
    pub scores: Vec<VisualScore>,
}

/// Score every infrared sample, in file order. Visible samples get no score.
pub fn projection_scores<K: Kernel>(
    set: &EmbeddingSet,
    kernel: &K,
    epsilon: f64,
) -> Result<VisualScoring, KernelError> {
    let (ir, vis) = split_domains(set)?;
    let (geometry, rows) = geometry_parts(kernel, &ir, &vis);
    let mmd = geometry.mmd;
    if mmd <= epsilon {
        return Err(KernelError::IndistinguishableDomains { mmd, epsilon });
    }
    let offset = geometry.gram_ir_ir_mean - geometry.gram_cross_mean;
    let scores = set
        .domain(Domain::Infrared)
        .zip(rows.to_vis.iter().zip(&rows.to_ir))
        .map(|(sample, (to_vis, to_ir))| {
            let projection = (to_vis - to_ir + offset) / mmd;
            VisualScore {
                id: sample.id.clone(),
                projection,
                d: projection + mmd,
            }
        })
        .collect();
    Ok(VisualScoring { geometry, scores })
}

/// Easy-to-hard order: descending `d` (closer to the visible center first),
/// ties by ascending id.
pub fn rank_by_visual_difficulty(scores: &[VisualScore]) -> Vec<SampleId> {
    let mut order: Vec<&VisualScore> = scores.iter().collect();
    order.sort_by(|a, b| match b.d.total_cmp(&a.d) {
        Ordering::Equal => a.id.cmp(&b.id),
        o => o,
    });
    order.into_iter().map(|s| s.id.clone()).collect()
}

/// First line of a visual-scores file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualScoresHeader {
    pub mmd: f64,
    pub bandwidth: f64,
    pub n_ir: usize,
    pub n_vis: usize,
}

pub fn write_visual_scores(
    path: &Path,
    header: &VisualScoresHeader,
    scores: &[VisualScore],
) -> Result<(), IngestError> {
    ingest::write_jsonl(path, Some(header), scores)
}

pub fn read_visual_scores(
    path: &Path,
) -> Result<(VisualScoresHeader, Vec<VisualScore>), IngestError> {
    let (header, rows) = ingest::read_jsonl_with_header::<VisualScoresHeader, VisualScore>(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut scores = Vec::with_capacity(rows.len());
    for (line, s) in rows {
        ingest::check_id(line, &s.id, &mut seen)?;
        ingest::check_finite(line, &[s.projection, s.d])?;
        scores.push(s);
    }
    Ok((header, scores))
}
