//! Generators and reference implementations shared by the integration tests.
//! Oracles here are deliberately naive: explicit loops, no shared helpers
//! with the library beyond its public data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use xmodal_curriculum::alignment_lesson::{loss_and_gradient, PairedEmbeddingSet, TextImagePair, TwoTowerModel};
use xmodal_curriculum::bench_eval::{Rect, ScoredBox};
use xmodal_curriculum::ingest::{AnnotatedObject, AnnotationRecord, BBox, EmbeddingSample, EmbeddingSet};
use xmodal_curriculum::rng::SeededRng;
use xmodal_curriculum::trainer::{grad_weighted_ce, weighted_ce_loss, LabeledSample, SoftmaxModel};
use xmodal_curriculum::{Domain, SampleId};

pub fn vector(rng: &mut SeededRng, dim: usize, shift: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.normal() + shift).collect()
}

/// Infrared samples `ir-000…` followed by visible samples `vis-000…`; the
/// visible cloud is offset by `shift` in every coordinate.
pub fn embedding_set(seed: u64, n_ir: usize, n_vis: usize, dim: usize, shift: f64) -> EmbeddingSet {
    let mut rng = SeededRng::new(seed);
    let mut samples = Vec::with_capacity(n_ir + n_vis);
    for i in 0..n_ir {
        samples.push(EmbeddingSample {
            id: SampleId::new(format!("ir-{i:03}")),
            domain: Domain::Infrared,
            vector: vector(&mut rng, dim, 0.0),
        });
    }
    for i in 0..n_vis {
        samples.push(EmbeddingSample {
            id: SampleId::new(format!("vis-{i:03}")),
            domain: Domain::Visible,
            vector: vector(&mut rng, dim, shift),
        });
    }
    EmbeddingSet::new(samples).unwrap()
}

fn split(set: &EmbeddingSet) -> (Vec<&[f64]>, Vec<&[f64]>) {
    let ir = set.domain(Domain::Infrared).map(|s| s.vector.as_slice()).collect();
    let vis = set.domain(Domain::Visible).map(|s| s.vector.as_slice()).collect();
    (ir, vis)
}

pub fn gauss(x: &[f64], y: &[f64], bw: f64) -> f64 {
    let mut sq = 0.0;
    for k in 0..x.len() {
        sq += (x[k] - y[k]) * (x[k] - y[k]);
    }
    (-sq / (2.0 * bw * bw)).exp()
}

/// Biased V-statistic as three explicit double sums.
pub fn brute_mmd2(set: &EmbeddingSet, bw: f64) -> f64 {
    let (ir, vis) = split(set);
    let (m, n) = (ir.len() as f64, vis.len() as f64);
    let mut a = 0.0;
    for x in &ir {
        for y in &ir {
            a += gauss(x, y, bw);
        }
    }
    let mut b = 0.0;
    for x in &vis {
        for y in &vis {
            b += gauss(x, y, bw);
        }
    }
    let mut c = 0.0;
    for x in &ir {
        for y in &vis {
            c += gauss(x, y, bw);
        }
    }
    a / (m * m) + b / (n * n) - 2.0 * c / (m * n)
}

fn mean_vector(rows: &[&[f64]]) -> Vec<f64> {
    let mut c = vec![0.0; rows[0].len()];
    for r in rows {
        for (acc, v) in c.iter_mut().zip(r.iter()) {
            *acc += v;
        }
    }
    c.iter().map(|v| v / rows.len() as f64).collect()
}

/// Linear-kernel scores with materialized centers: `(id, projection, d)` per
/// infrared sample and the center distance.
pub fn explicit_linear_scores(set: &EmbeddingSet) -> (Vec<(SampleId, f64, f64)>, f64) {
    let (ir, vis) = split(set);
    let c_ir = mean_vector(&ir);
    let c_vis = mean_vector(&vis);
    let dir: Vec<f64> = c_vis.iter().zip(&c_ir).map(|(a, b)| a - b).collect();
    let dist = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit: Vec<f64> = dir.iter().map(|v| v / dist).collect();
    let scores = set
        .domain(Domain::Infrared)
        .map(|s| {
            let proj: f64 = s
                .vector
                .iter()
                .zip(&c_ir)
                .zip(&unit)
                .map(|((x, c), u)| (x - c) * u)
                .sum();
            (s.id.clone(), proj, proj + dist)
        })
        .collect();
    (scores, dist)
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sample weight by direct transcription of the two-branch rule.
pub fn weight_oracle(alpha: f64, all: &[f64]) -> f64 {
    let mut pos: Vec<f64> = all.iter().copied().filter(|a| *a > 0.0).collect();
    let mut neg: Vec<f64> = all.iter().copied().filter(|a| *a <= 0.0).map(f64::abs).collect();
    let med = |v: &mut Vec<f64>| -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    };
    let (mp, mn) = (med(&mut pos), med(&mut neg));
    if alpha > 0.0 {
        let r = if mp == 0.0 { 0.0 } else { alpha / mp };
        1.0 - logistic(r)
    } else {
        let r = if mn == 0.0 { 0.0 } else { -alpha / mn };
        1.0 + logistic(r)
    }
}

fn rect_iou(a: &Rect, b: &Rect) -> f64 {
    let ix = f64::max(0.0, f64::min(a.x + a.w, b.x + b.w) - f64::max(a.x, b.x));
    let iy = f64::max(0.0, f64::min(a.y + a.h, b.y + b.h) - f64::max(a.y, b.y));
    let inter = ix * iy;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// AP (×100) of one fixed prediction order.
pub fn ap_of_order(order: &[(SampleId, Rect)], truths: &BTreeMap<SampleId, Vec<Rect>>) -> f64 {
    let total: usize = truths.values().map(Vec::len).sum();
    let mut used: BTreeMap<&SampleId, Vec<bool>> =
        truths.iter().map(|(k, v)| (k, vec![false; v.len()])).collect();
    let mut hits = Vec::new();
    for (img, pb) in order {
        let gts = truths.get(img).map(Vec::as_slice).unwrap_or(&[]);
        let mut best = None;
        let mut best_iou = 0.5;
        for (g, gt) in gts.iter().enumerate() {
            let o = rect_iou(pb, gt);
            if !used[img][g] && o >= best_iou && best.is_none_or(|_| o > best_iou) {
                best = Some(g);
                best_iou = o;
            }
        }
        if let Some(g) = best {
            used.get_mut(img).unwrap()[g] = true;
        }
        hits.push(best.is_some());
    }
    // Interpolated precision at each prefix: max precision over all longer prefixes.
    let prec_at = |k: usize| {
        let tp = hits[..=k].iter().filter(|h| **h).count();
        tp as f64 / (k + 1) as f64
    };
    // Each true positive adds 1/total recall at its interpolated precision.
    let mut ap = 0.0;
    for k in 0..hits.len() {
        if hits[k] {
            ap += (k..hits.len()).map(prec_at).fold(0.0, f64::max) / total as f64;
        }
    }
    100.0 * ap
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// AP of every ordering consistent with non-increasing confidence, plus the
/// one that breaks ties by `(image_id, box index)`.
pub fn map_enumeration(
    preds: &BTreeMap<SampleId, Vec<ScoredBox>>,
    truths: &BTreeMap<SampleId, Vec<Rect>>,
) -> (Vec<f64>, f64) {
    let flat: Vec<(f64, SampleId, usize, Rect)> = preds
        .iter()
        .flat_map(|(id, v)| {
            v.iter()
                .enumerate()
                .map(move |(k, b)| (b.confidence.unwrap(), id.clone(), k, b.bbox))
        })
        .collect();
    let mut all = Vec::new();
    let mut canonical = None;
    for perm in permutations(flat.len()) {
        let ok = perm.windows(2).all(|w| flat[w[0]].0 >= flat[w[1]].0);
        if !ok {
            continue;
        }
        let order: Vec<(SampleId, Rect)> =
            perm.iter().map(|&i| (flat[i].1.clone(), flat[i].3)).collect();
        let ap = ap_of_order(&order, truths);
        let tie_broken = perm.windows(2).all(|w| {
            let (a, b) = (&flat[w[0]], &flat[w[1]]);
            a.0 > b.0 || (a.1.clone(), a.2) < (b.1.clone(), b.2)
        });
        if tie_broken {
            canonical = Some(ap);
        }
        all.push(ap);
    }
    (all, canonical.expect("a tie-broken order always exists"))
}

pub const VOCABULARY: &[&str] = &[
    "bicycle", "bus", "car", "dog", "motorcycle", "people", "person", "truck", "van",
];
pub const SCENES: &[&str] = &["road", "parking lot", "campus", "bridge", "sea", "street"];

pub fn vocabulary() -> BTreeSet<String> {
    VOCABULARY.iter().map(|s| s.to_string()).collect()
}

pub fn scenes() -> BTreeSet<String> {
    SCENES.iter().map(|s| s.to_string()).collect()
}

/// Random valid annotation: 0..=6 objects on a 640×512 frame.
pub fn random_annotation(rng: &mut SeededRng, index: usize) -> AnnotationRecord {
    let (width, height) = (640u32, 512u32);
    let n = rng.below(7);
    let objects = (0..n)
        .map(|_| {
            let w = 1 + rng.below(80) as u32;
            let h = 1 + rng.below(80) as u32;
            let x = rng.below((width - w + 1) as usize) as u32;
            let y = rng.below((height - h + 1) as usize) as u32;
            AnnotatedObject {
                category: VOCABULARY[rng.below(VOCABULARY.len())].to_string(),
                bbox: BBox::new(x, y, w, h),
            }
        })
        .collect();
    let scene = rng
        .bernoulli(0.8)
        .then(|| SCENES[rng.below(SCENES.len())].to_string());
    AnnotationRecord {
        image_id: SampleId::new(format!("frame-{index:05}")),
        width,
        height,
        objects,
        scene,
    }
}

/// Parse a relationship statement and decide it from the two centers alone.
/// Returns `(category_a, center_a, category_b, center_b, statement_holds)`.
pub fn check_relationship(question: &str) -> Option<(String, (f64, f64), String, (f64, f64), bool)> {
    let body = question.split("? ").nth(1)?.strip_prefix("The ")?.strip_suffix('.')?;
    let (a_cat, rest) = body.split_once(" centered at (")?;
    let (a_center, rest) = rest.split_once(") is ")?;
    let (phrase, rest) = rest.rsplit_once(" the ")?;
    let (b_cat, b_center) = rest.split_once(" centered at (")?;
    let b_center = b_center.strip_suffix(')')?;
    let parse = |s: &str| -> Option<(f64, f64)> {
        let (x, y) = s.split_once(", ")?;
        Some((x.parse().ok()?, y.parse().ok()?))
    };
    let (pa, pb) = (parse(a_center)?, parse(b_center)?);
    let (dx, dy) = (pb.0 - pa.0, pb.1 - pa.1);
    let truth = if dx.abs() >= dy.abs() {
        if dx > 0.0 { "to the left of" } else { "to the right of" }
    } else if dy > 0.0 {
        "above"
    } else {
        "below"
    };
    Some((a_cat.to_string(), pa, b_cat.to_string(), pb, phrase == truth))
}

/// Two-class data in five difficulty tiers of `per_tier` samples, easiest
/// first. Feature 0 carries the label at margin `4 − t … 5 − t` in tier `t`.
/// In tiers 0-3 feature 1 is a shortcut (`±shortcut + N(0,1)`) that agrees
/// with the label; in tier 4 it is pure noise and `noise` of labels flip.
/// With `holdout` set, feature 1 is noise in every tier and no label flips.
pub fn tiered_dataset(
    rng: &mut SeededRng,
    prefix: &str,
    per_tier: usize,
    shortcut: f64,
    noise: f64,
    holdout: bool,
) -> Vec<LabeledSample> {
    let mut out = Vec::with_capacity(5 * per_tier);
    for t in 0..5 {
        for i in 0..per_tier {
            let y = rng.below(2);
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let x0 = sign * rng.uniform_in(4.0 - t as f64, 5.0 - t as f64);
            let x1 = if holdout || t == 4 {
                rng.normal()
            } else {
                shortcut * sign + rng.normal()
            };
            let label = if !holdout && t == 4 && rng.bernoulli(noise) { 1 - y } else { y };
            out.push(LabeledSample {
                id: SampleId::new(format!("{prefix}{t}-{i:04}")),
                features: vec![x0, x1],
                label,
            });
        }
    }
    out
}

const FD_STEP: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn random_pairs(rng: &mut SeededRng, n: usize, di: usize, dt: usize) -> PairedEmbeddingSet {
    PairedEmbeddingSet::new(
        (0..n)
            .map(|i| TextImagePair {
                id: SampleId::new(format!("p{i}")),
                image_vector: vector(rng, di, 0.0),
                text_vector: vector(rng, dt, 0.0),
            })
            .collect(),
    )
    .unwrap()
}

/// Worst relative error between the analytic contrastive gradient and
/// central differences, over every entry of both towers at one random point.
pub fn contrastive_fd_error(point: u64) -> f64 {
    let mut rng = SeededRng::new(17_000 + point);
    let batch = random_pairs(&mut rng, 5, 4, 3);
    let model = TwoTowerModel::init(4, 3, 3, 0.3 + 0.05 * point as f64, 100 + point).unwrap();
    let (_, grads) = loss_and_gradient(&model, &batch).unwrap();
    let mut worst: f64 = 0.0;
    for tower in 0..2 {
        let (analytic, shape): (&Array2<f64>, _) = if tower == 0 {
            (&grads.proj_img, model.proj_img.dim())
        } else {
            (&grads.proj_txt, model.proj_txt.dim())
        };
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let bump = |delta: f64| {
                    let mut m = model.clone();
                    let target = if tower == 0 { &mut m.proj_img } else { &mut m.proj_txt };
                    target[[r, c]] += delta;
                    loss_and_gradient(&m, &batch).unwrap().0
                };
                let numeric = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(analytic[[r, c]], numeric));
            }
        }
    }
    worst
}

/// Same for the weighted cross-entropy, over every entry of `W` and `b`.
pub fn weighted_ce_fd_error(point: u64) -> f64 {
    let mut rng = SeededRng::new(29_000 + point);
    let (classes, dim) = (3, 4);
    let samples: Vec<LabeledSample> = (0..7)
        .map(|i| LabeledSample {
            id: SampleId::new(format!("s{i}")),
            features: vector(&mut rng, dim, 0.0),
            label: rng.below(classes),
        })
        .collect();
    let batch: Vec<&LabeledSample> = samples.iter().collect();
    let weights: BTreeMap<SampleId, f64> = samples
        .iter()
        .map(|s| (s.id.clone(), rng.uniform_in(0.0, 2.0)))
        .collect();
    let mut model = SoftmaxModel::seeded(classes, dim, 500 + point);
    model.weights.mapv_inplace(|w| w * 50.0);
    let g = grad_weighted_ce(&model, &batch, Some(&weights)).unwrap();
    let loss_at = |m: &SoftmaxModel| weighted_ce_loss(m, &batch, Some(&weights)).unwrap();
    let mut worst: f64 = 0.0;
    for c in 0..classes {
        for d in 0..=dim {
            let bump = |delta: f64| {
                let mut m = model.clone();
                if d == dim {
                    m.bias[c] += delta;
                } else {
                    m.weights[[c, d]] += delta;
                }
                loss_at(&m)
            };
            let numeric = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
            let analytic = if d == dim { g.bias[c] } else { g.weights[[c, d]] };
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}
