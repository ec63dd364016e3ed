//! Rule-based infrared-text captions and benchmark questions from detection
//! annotations, plus crop-region and frame-resampling helpers used during
//! data curation.
//!
//! Template set v1. Every random choice draws from a [`SeededRng`] keyed by
//! the record's seed, in the order documented on each generator, so output
//! is a pure function of `(annotation, vocabulary, seed)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AnnotatedObject, AnnotationRecord, BBox, SampleId};
use crate::rng::{derive_seed, SeededRng};
use crate::task::TaskKind;

pub const PEDESTRIAN_CATEGORIES: &[&str] = &["people", "person", "pedestrian"];
pub const VEHICLE_CATEGORIES: &[&str] = &[
    "bus",
    "car",
    "freight_car",
    "motorbike",
    "motorcycle",
    "truck",
    "van",
    "vehicle",
];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PairgenError {
    #[error("vocabulary has {0} entries, need at least 4")]
    VocabularyTooSmall(usize),
    #[error("only {available} distractors available, need 3")]
    NotEnoughDistractors { available: usize },
    #[error("no vocabulary category is absent from the image")]
    NoAbsentCategory,
    #[error("image has no annotated objects")]
    NoObjects,
    #[error("relationship needs two objects with distinct centers")]
    NoRelatablePair,
    #[error("image has no scene label")]
    MissingScene,
    #[error("no object matches the {0} category filter")]
    NoMatchingObjects(TaskKind),
    #[error("task {0} is not produced by this generator")]
    WrongGenerator(TaskKind),
    #[error("retain rate must lie in (0, 1], got {0}")]
    InvalidRetainRate(f64),
    #[error("re-id grid needs a second image of the query identity and 6 other identities")]
    InsufficientGallery,
}

/// Answer payload; serialized untagged as a string, number, box, box list, or
/// option list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Text(String),
    Number(u64),
    Box(BBox),
    Boxes(Vec<BBox>),
    Choices(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub image_id: SampleId,
    pub task: TaskKind,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub answer: Answer,
    pub seed: u64,
    /// Re-id only: the eight image ids of the 2x4 grid, query first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<SampleId>>,
}

impl QaRecord {
    /// Check the record's structural invariants, optionally against the
    /// annotation it was generated from.
    pub fn validate(&self, ann: Option<&AnnotationRecord>) -> Result<(), String> {
        let in_bounds = |b: &BBox| ann.is_none_or(|a| b.w > 0 && b.h > 0 && b.fits_within(a.width, a.height));
        match self.task {
            TaskKind::Recognition | TaskKind::Scene | TaskKind::Security => {
                let opts = self.options.as_ref().ok_or("missing options")?;
                let distinct: BTreeSet<&String> = opts.iter().collect();
                if opts.len() != 4 || distinct.len() != 4 {
                    return Err(format!("need 4 distinct options, got {opts:?}"));
                }
                match (&self.task, &self.answer) {
                    (TaskKind::Security, Answer::Choices(c)) => {
                        if c.is_empty() || !c.iter().all(|x| opts.contains(x)) {
                            return Err(format!("answer {c:?} not a nonempty subset of options"));
                        }
                        if let Some(a) = ann {
                            let present = a.categories();
                            for o in opts {
                                if c.contains(o) == present.contains(o.as_str()) {
                                    return Err(format!("option {o} misclassified"));
                                }
                            }
                        }
                    }
                    (TaskKind::Security, _) => return Err("security answer must be a list".into()),
                    (_, Answer::Text(t)) if opts.contains(t) => {}
                    _ => return Err("answer is not one of the options".into()),
                }
            }
            TaskKind::Grounding => match &self.answer {
                Answer::Box(b) if in_bounds(b) => {}
                _ => return Err("grounding answer must be an in-bounds box".into()),
            },
            TaskKind::Location => match &self.answer {
                Answer::Boxes(bs) if !bs.is_empty() && bs.iter().all(in_bounds) => {}
                _ => return Err("location answer must be in-bounds boxes".into()),
            },
            TaskKind::Relationship => match &self.answer {
                Answer::Text(t) if t == "true" || t == "false" => {}
                _ => return Err("relationship answer must be true or false".into()),
            },
            TaskKind::AerialCounting | TaskKind::PedestrianCounting => match &self.answer {
                Answer::Number(n) if *n >= 1 => {}
                _ => return Err("counting answer must be a positive count".into()),
            },
            TaskKind::Reid => match (&self.answer, &self.grid) {
                (Answer::Number(n), Some(g)) if g.len() == 8 && (2..=8).contains(n) => {}
                _ => return Err("re-id needs an 8-image grid and a match in 2..=8".into()),
            },
        }
        if self.question.is_empty() {
            return Err("empty question".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: SampleId,
    pub text: String,
}

fn plural(category: &str, count: usize) -> String {
    if count == 1 {
        category.to_string()
    } else {
        format!("{category}s")
    }
}

/// Per-category counts, most frequent first, then alphabetical.
fn category_counts(ann: &AnnotationRecord) -> Vec<(&str, usize)> {
    let mut counts: Vec<(&str, usize)> = ann
        .categories()
        .into_iter()
        .map(|c| (c, ann.count_of(c)))
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    counts
}

/// `An infrared image of {scene | a scene} containing {n} {category}[s], ….`
pub fn generate_caption(ann: &AnnotationRecord) -> CaptionRecord {
    let scene = ann.scene.as_deref().unwrap_or("a scene");
    let counts = category_counts(ann);
    let contents = if counts.is_empty() {
        "no annotated objects".to_string()
    } else {
        counts
            .iter()
            .map(|(c, n)| format!("{n} {}", plural(c, *n)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    CaptionRecord {
        image_id: ann.image_id.clone(),
        text: format!("An infrared image of {scene} containing {contents}."),
    }
}

fn pick<'a, T>(rng: &mut SeededRng, items: &'a [T]) -> &'a T {
    &items[rng.below(items.len())]
}

fn pick_n<T: Clone>(rng: &mut SeededRng, items: &[T], k: usize) -> Vec<T> {
    rng.sample_indices(items.len(), k)
        .into_iter()
        .map(|i| items[i].clone())
        .collect()
}

fn record(ann: &AnnotationRecord, task: TaskKind, question: String, seed: u64) -> QaRecord {
    QaRecord {
        image_id: ann.image_id.clone(),
        task,
        question,
        options: None,
        answer: Answer::Text(String::new()),
        seed,
        grid: None,
    }
}

/// Four-option questions: recognition, scene, security.
///
/// `vocabulary` is the category list for recognition and security and the
/// scene list for scene. Draw order: correct answer (or the number of absent
/// options for security), then distractors, then the option shuffle.
pub fn generate_mcq(
    ann: &AnnotationRecord,
    task: TaskKind,
    vocabulary: &BTreeSet<String>,
    seed: u64,
) -> Result<QaRecord, PairgenError> {
    if vocabulary.len() < 4 {
        return Err(PairgenError::VocabularyTooSmall(vocabulary.len()));
    }
    let mut rng = SeededRng::new(seed);
    let present = ann.categories();
    let (question, mut options, answer_of): (String, Vec<String>, Box<dyn Fn(&[String]) -> Answer>) =
        match task {
            TaskKind::Recognition => {
                let candidates: Vec<String> = vocabulary
                    .iter()
                    .filter(|c| present.contains(c.as_str()))
                    .cloned()
                    .collect();
                if candidates.is_empty() {
                    return Err(PairgenError::NoObjects);
                }
                let absent: Vec<String> = vocabulary
                    .iter()
                    .filter(|c| !present.contains(c.as_str()))
                    .cloned()
                    .collect();
                if absent.len() < 3 {
                    return Err(PairgenError::NotEnoughDistractors {
                        available: absent.len(),
                    });
                }
                let correct = pick(&mut rng, &candidates).clone();
                let mut options = pick_n(&mut rng, &absent, 3);
                options.push(correct.clone());
                (
                    "Which of the following targets appears in this infrared image?".into(),
                    options,
                    Box::new(move |_| Answer::Text(correct.clone())),
                )
            }
            TaskKind::Scene => {
                let scene = ann.scene.clone().ok_or(PairgenError::MissingScene)?;
                let others: Vec<String> = vocabulary.iter().filter(|s| **s != scene).cloned().collect();
                if others.len() < 3 {
                    return Err(PairgenError::NotEnoughDistractors {
                        available: others.len(),
                    });
                }
                let mut options = pick_n(&mut rng, &others, 3);
                options.push(scene.clone());
                (
                    "Which of the following best describes the scene in this infrared image?".into(),
                    options,
                    Box::new(move |_| Answer::Text(scene.clone())),
                )
            }
            TaskKind::Security => {
                let (inside, absent): (Vec<String>, Vec<String>) = vocabulary
                    .iter()
                    .cloned()
                    .partition(|c| present.contains(c.as_str()));
                if absent.is_empty() {
                    return Err(PairgenError::NoAbsentCategory);
                }
                let lo = 4usize.saturating_sub(inside.len()).max(1);
                let hi = absent.len().min(4);
                let n_absent = lo + rng.below(hi - lo + 1);
                let mut options = pick_n(&mut rng, &absent, n_absent);
                options.extend(pick_n(&mut rng, &inside, 4 - n_absent));
                let absent_set: BTreeSet<String> = absent.into_iter().collect();
                (
                    "Which of the following targets are NOT present in this infrared image? Select all that apply.".into(),
                    options,
                    Box::new(move |opts| {
                        Answer::Choices(
                            opts.iter().filter(|o| absent_set.contains(*o)).cloned().collect(),
                        )
                    }),
                )
            }
            other => return Err(PairgenError::WrongGenerator(other)),
        };
    rng.shuffle(&mut options);
    let mut rec = record(ann, task, question, seed);
    rec.answer = answer_of(&options);
    rec.options = Some(options);
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extreme {
    Leftmost,
    Rightmost,
    Topmost,
}

impl Extreme {
    const ALL: [Extreme; 3] = [Extreme::Leftmost, Extreme::Rightmost, Extreme::Topmost];

    fn word(self) -> &'static str {
        match self {
            Extreme::Leftmost => "leftmost",
            Extreme::Rightmost => "rightmost",
            Extreme::Topmost => "topmost",
        }
    }

    /// Index of the extreme object and whether it is unique.
    fn select(self, objs: &[&AnnotatedObject]) -> (usize, bool) {
        let key = |o: &AnnotatedObject| {
            let (cx, cy) = o.bbox.center();
            match self {
                Extreme::Leftmost => cx,
                Extreme::Rightmost => -cx,
                Extreme::Topmost => cy,
            }
        };
        let best = objs
            .iter()
            .map(|o| key(o))
            .fold(f64::INFINITY, f64::min);
        let hits: Vec<usize> = (0..objs.len()).filter(|&i| key(objs[i]) == best).collect();
        (hits[0], hits.len() == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "to the left of",
            Relation::RightOf => "to the right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }

    /// Dominant-axis relation of `a` relative to `b` by box centers; `None`
    /// when the centers coincide.
    pub fn between(a: &BBox, b: &BBox) -> Option<Self> {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        let (dx, dy) = (bx - ax, by - ay);
        if dx == 0.0 && dy == 0.0 {
            None
        } else if dx.abs() >= dy.abs() {
            Some(if dx > 0.0 { Relation::LeftOf } else { Relation::RightOf })
        } else {
            Some(if dy > 0.0 { Relation::Above } else { Relation::Below })
        }
    }
}

fn fmt_center(b: &BBox) -> String {
    let (x, y) = b.center();
    format!("({x}, {y})")
}

fn counting_filter(task: TaskKind) -> &'static [&'static str] {
    if task == TaskKind::PedestrianCounting {
        PEDESTRIAN_CATEGORIES
    } else {
        VEHICLE_CATEGORIES
    }
}

/// Box-level questions: grounding, location, relationship, and both
/// counting tasks (pedestrian categories vs vehicle categories).
///
/// Draw order: grounding picks a category then a starting extreme word
/// (rotating to the next word while the extreme is tied); location and
/// counting pick a category; relationship picks a starting ordered pair,
/// scanning forward past pairs with coincident centers, then the truth value.
pub fn generate_spatial(
    ann: &AnnotationRecord,
    task: TaskKind,
    seed: u64,
) -> Result<QaRecord, PairgenError> {
    let mut rng = SeededRng::new(seed);
    let categories: Vec<&str> = ann.categories().into_iter().collect();
    let of_category = |c: &str| -> Vec<&AnnotatedObject> {
        ann.objects.iter().filter(|o| o.category == c).collect()
    };
    match task {
        TaskKind::Grounding => {
            if categories.is_empty() {
                return Err(PairgenError::NoObjects);
            }
            let category = *pick(&mut rng, &categories);
            let objs = of_category(category);
            let start = rng.below(Extreme::ALL.len());
            let rotation = (0..3).map(|k| Extreme::ALL[(start + k) % 3]);
            let (extreme, idx) = rotation
                .clone()
                .map(|e| (e, e.select(&objs)))
                .find(|(_, (_, unique))| *unique)
                .map(|(e, (i, _))| (e, i))
                .unwrap_or_else(|| {
                    let e = Extreme::ALL[start];
                    (e, e.select(&objs).0)
                });
            let mut rec = record(
                ann,
                task,
                format!(
                    "Locate the {} {category} in this infrared image and return its bounding box as [x, y, w, h].",
                    extreme.word()
                ),
                seed,
            );
            rec.answer = Answer::Box(objs[idx].bbox);
            Ok(rec)
        }
        TaskKind::Location => {
            if categories.is_empty() {
                return Err(PairgenError::NoObjects);
            }
            let category = *pick(&mut rng, &categories);
            let mut rec = record(
                ann,
                task,
                format!(
                    "Give the bounding boxes [x, y, w, h] of all {} in this infrared image.",
                    plural(category, 2)
                ),
                seed,
            );
            rec.answer = Answer::Boxes(of_category(category).iter().map(|o| o.bbox).collect());
            Ok(rec)
        }
        TaskKind::Relationship => {
            let n = ann.objects.len();
            if n < 2 {
                return Err(PairgenError::NoRelatablePair);
            }
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .collect();
            let start = rng.below(pairs.len());
            let (a, b, truth) = (0..pairs.len())
                .map(|k| pairs[(start + k) % pairs.len()])
                .find_map(|(i, j)| {
                    Relation::between(&ann.objects[i].bbox, &ann.objects[j].bbox)
                        .map(|r| (&ann.objects[i], &ann.objects[j], r))
                })
                .ok_or(PairgenError::NoRelatablePair)?;
            let holds = rng.bernoulli(0.5);
            let stated = if holds { truth } else { truth.inverse() };
            let mut rec = record(
                ann,
                task,
                format!(
                    "Is the following statement true or false? The {} centered at {} is {} the {} centered at {}.",
                    a.category,
                    fmt_center(&a.bbox),
                    stated.phrase(),
                    b.category,
                    fmt_center(&b.bbox)
                ),
                seed,
            );
            rec.answer = Answer::Text(if holds { "true" } else { "false" }.into());
            Ok(rec)
        }
        TaskKind::PedestrianCounting | TaskKind::AerialCounting => {
            let filter = counting_filter(task);
            let matching: Vec<&str> = categories
                .iter()
                .copied()
                .filter(|c| filter.contains(c))
                .collect();
            if matching.is_empty() {
                return Err(PairgenError::NoMatchingObjects(task));
            }
            let category = *pick(&mut rng, &matching);
            let count = ann.count_of(category);
            let mut rec = record(
                ann,
                task,
                format!("How many {} are there in this infrared image?", plural(category, 2)),
                seed,
            );
            rec.answer = Answer::Number(count as u64);
            Ok(rec)
        }
        other => Err(PairgenError::WrongGenerator(other)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReidEntry {
    pub image_id: SampleId,
    pub identity: String,
}

/// Re-id grid manifest for `gallery[query]`: one other image of the same
/// identity and six of other identities fill grid slots 2..=8 in seeded
/// order. Draw order: the match, the six distractors, the slot shuffle.
pub fn generate_reid(
    gallery: &[ReidEntry],
    query: usize,
    seed: u64,
) -> Result<QaRecord, PairgenError> {
    let q = &gallery[query];
    let same: Vec<&SampleId> = gallery
        .iter()
        .enumerate()
        .filter(|(i, e)| *i != query && e.identity == q.identity)
        .map(|(_, e)| &e.image_id)
        .collect();
    let other: Vec<&SampleId> = gallery
        .iter()
        .filter(|e| e.identity != q.identity)
        .map(|e| &e.image_id)
        .collect();
    if same.is_empty() || other.len() < 6 {
        return Err(PairgenError::InsufficientGallery);
    }
    let mut rng = SeededRng::new(seed);
    let matched = (*pick(&mut rng, &same)).clone();
    let mut slots: Vec<SampleId> = pick_n(&mut rng, &other, 6).into_iter().cloned().collect();
    slots.push(matched.clone());
    rng.shuffle(&mut slots);
    let number = 2 + slots.iter().position(|s| *s == matched).expect("match placed") as u64;
    let mut grid = vec![q.image_id.clone()];
    grid.extend(slots);
    Ok(QaRecord {
        image_id: q.image_id.clone(),
        task: TaskKind::Reid,
        question: "The image is a 2x4 grid of samples numbered 1-8 from the top-left. Which sample shows the same identity as sample 1?".into(),
        options: None,
        answer: Answer::Number(number),
        seed,
        grid: Some(grid),
    })
}

/// Union of all object boxes, grown by `margin_frac` of the union's size on
/// each side and clipped to the image.
pub fn compute_crop_region(ann: &AnnotationRecord, margin_frac: f64) -> Result<BBox, PairgenError> {
    let first = ann.objects.first().ok_or(PairgenError::NoObjects)?;
    let margin_frac = margin_frac.max(0.0);
    let (mut x0, mut y0) = (first.bbox.x as u64, first.bbox.y as u64);
    let (mut x1, mut y1) = (first.bbox.right(), first.bbox.bottom());
    for o in &ann.objects[1..] {
        x0 = x0.min(o.bbox.x as u64);
        y0 = y0.min(o.bbox.y as u64);
        x1 = x1.max(o.bbox.right());
        y1 = y1.max(o.bbox.bottom());
    }
    let mx = margin_frac * (x1 - x0) as f64;
    let my = margin_frac * (y1 - y0) as f64;
    let clip = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
    let left = clip((x0 as f64 - mx).floor(), ann.width);
    let top = clip((y0 as f64 - my).floor(), ann.height);
    let right = clip((x1 as f64 + mx).ceil(), ann.width);
    let bottom = clip((y1 as f64 + my).ceil(), ann.height);
    Ok(BBox::new(left, top, right - left, bottom - top))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMode {
    Stride,
    SeededUniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleConfig {
    pub retain_rate: f64,
    pub mode: ResampleMode,
}

/// Thin a frame sequence. Stride keeps every `round(1/rate)`-th item from
/// index 0; seeded-uniform keeps `⌈N·rate⌉` items without replacement. Both
/// preserve the input order.
pub fn resample_frames<T: Clone>(
    items: &[T],
    cfg: ResampleConfig,
    seed: u64,
) -> Result<Vec<T>, PairgenError> {
    let rate = cfg.retain_rate;
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(PairgenError::InvalidRetainRate(rate));
    }
    Ok(match cfg.mode {
        ResampleMode::Stride => {
            let stride = (1.0 / rate).round().max(1.0) as usize;
            items.iter().step_by(stride).cloned().collect()
        }
        ResampleMode::SeededUniform => {
            // Absorb representation error in N·rate (1.7e6 × 0.01 is 17000.000000000004).
            let k = ((items.len() as f64 * rate) - 1e-9).ceil().max(0.0) as usize;
            let k = k.min(items.len());
            let mut keep = SeededRng::new(seed).sample_indices(items.len(), k);
            keep.sort_unstable();
            keep.into_iter().map(|i| items[i].clone()).collect()
        }
    })
}

/// Stable 64-bit FNV-1a of an id, used to key per-record seeds.
pub fn id_hash(id: &SampleId) -> u64 {
    id.as_str().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for one `(image, task)` record under a run-level seed.
pub fn record_seed(base: u64, image_id: &SampleId, task: TaskKind) -> u64 {
    let task_index = TaskKind::ALL.iter().position(|t| *t == task).unwrap_or(0) as u64;
    derive_seed(base, &[id_hash(image_id), task_index])
}

/// Everything generated for one annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub caption: CaptionRecord,
    pub questions: Vec<QaRecord>,
    /// Tasks whose preconditions the annotation did not meet.
    pub skipped: Vec<(TaskKind, PairgenError)>,
}

/// Caption plus every annotation-driven task (all but re-id), in
/// [`TaskKind::ALL`] order.
pub fn generate_for_annotation(
    ann: &AnnotationRecord,
    categories: &BTreeSet<String>,
    scenes: &BTreeSet<String>,
    base_seed: u64,
) -> Generated {
    let mut questions = Vec::new();
    let mut skipped = Vec::new();
    for task in TaskKind::ALL {
        let seed = record_seed(base_seed, &ann.image_id, task);
        let result = match task {
            TaskKind::Reid => continue,
            TaskKind::Scene => generate_mcq(ann, task, scenes, seed),
            TaskKind::Recognition | TaskKind::Security => generate_mcq(ann, task, categories, seed),
            _ => generate_spatial(ann, task, seed),
        };
        match result {
            Ok(r) => questions.push(r),
            Err(e) => skipped.push((task, e)),
        }
    }
    Generated {
        caption: generate_caption(ann),
        questions,
        skipped,
    }
}
