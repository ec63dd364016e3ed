//! Rank fusion, baby-step tiers, and the six sample schedules.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, IngestError, SampleId};
use crate::rng::SeededRng;

pub const DEFAULT_TIERS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum CurriculumError {
    #[error("rankings cover different id sets ({0})")]
    IdSetMismatch(String),
    #[error("ranking contains {0} twice")]
    DuplicateId(SampleId),
    #[error("cannot split {n} samples into {tiers} tiers")]
    TooManyTiers { tiers: usize, n: usize },
    #[error("tier count must be positive")]
    ZeroTiers,
    #[error("empty ranking")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedEntry {
    pub id: SampleId,
    pub rank_visual: usize,
    pub rank_alignment: usize,
    pub fused_key: usize,
}

/// Borda fusion of the two lesson rankings, easiest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedRanking {
    entries: Vec<FusedEntry>,
}

impl FusedRanking {
    pub fn entries(&self) -> &[FusedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &SampleId> {
        self.entries.iter().map(|e| &e.id)
    }

    /// Rebuild from stored entries, checking the fusion invariants.
    pub fn from_entries(mut entries: Vec<FusedEntry>) -> Result<Self, CurriculumError> {
        let n = entries.len();
        let mut seen = HashSet::new();
        let mut vis = vec![false; n];
        let mut ali = vec![false; n];
        for e in &entries {
            if !seen.insert(&e.id) {
                return Err(CurriculumError::DuplicateId(e.id.clone()));
            }
            let valid = e.rank_visual < n
                && e.rank_alignment < n
                && !std::mem::replace(&mut vis[e.rank_visual], true)
                && !std::mem::replace(&mut ali[e.rank_alignment], true)
                && e.fused_key == e.rank_visual + e.rank_alignment;
            if !valid {
                return Err(CurriculumError::IdSetMismatch(format!(
                    "entry {} is not a consistent rank pair",
                    e.id
                )));
            }
        }
        entries.sort_by(|a, b| (a.fused_key, &a.id).cmp(&(b.fused_key, &b.id)));
        Ok(Self { entries })
    }
}

fn positions(order: &[SampleId]) -> Result<HashMap<&SampleId, usize>, CurriculumError> {
    let mut map = HashMap::with_capacity(order.len());
    for (i, id) in order.iter().enumerate() {
        if map.insert(id, i).is_some() {
            return Err(CurriculumError::DuplicateId(id.clone()));
        }
    }
    Ok(map)
}

/// Sum the two ranks of every id and sort by `(sum, id)`.
pub fn fuse_rankings(
    visual: &[SampleId],
    alignment: &[SampleId],
) -> Result<FusedRanking, CurriculumError> {
    if visual.is_empty() && alignment.is_empty() {
        return Err(CurriculumError::Empty);
    }
    let align_pos = positions(alignment)?;
    positions(visual)?;
    if visual.len() != alignment.len() {
        return Err(CurriculumError::IdSetMismatch(format!(
            "{} visual ids vs {} alignment ids",
            visual.len(),
            alignment.len()
        )));
    }
    let mut entries = visual
        .iter()
        .enumerate()
        .map(|(rank_visual, id)| {
            let rank_alignment = *align_pos.get(id).ok_or_else(|| {
                CurriculumError::IdSetMismatch(format!("{id} has no alignment rank"))
            })?;
            Ok(FusedEntry {
                id: id.clone(),
                rank_visual,
                rank_alignment,
                fused_key: rank_visual + rank_alignment,
            })
        })
        .collect::<Result<Vec<_>, CurriculumError>>()?;
    entries.sort_by(|a, b| (a.fused_key, &a.id).cmp(&(b.fused_key, &b.id)));
    Ok(FusedRanking { entries })
}

/// Contiguous slices of the fused order; the first `N mod M` tiers hold one
/// extra sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierPlan {
    tiers: Vec<Vec<FusedEntry>>,
}

impl TierPlan {
    pub fn tiers(&self) -> &[Vec<FusedEntry>] {
        &self.tiers
    }

    pub fn num_tiers(&self) -> usize {
        self.tiers.len()
    }

    pub fn len(&self) -> usize {
        self.tiers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flat(&self) -> impl DoubleEndedIterator<Item = (usize, &FusedEntry)> {
        self.tiers
            .iter()
            .enumerate()
            .flat_map(|(t, tier)| tier.iter().map(move |e| (t, e)))
    }
}

pub fn partition_tiers(ranking: &FusedRanking, tiers: usize) -> Result<TierPlan, CurriculumError> {
    let n = ranking.len();
    if tiers == 0 {
        return Err(CurriculumError::ZeroTiers);
    }
    if tiers > n {
        return Err(CurriculumError::TooManyTiers { tiers, n });
    }
    let (base, extra) = (n / tiers, n % tiers);
    let mut rest = ranking.entries();
    let plan = (0..tiers)
        .map(|t| {
            let (head, tail) = rest.split_at(base + usize::from(t < extra));
            rest = tail;
            head.to_vec()
        })
        .collect();
    Ok(TierPlan { tiers: plan })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    DifficultyAscending,
    DifficultyDescending,
    Bidirectional,
    Random,
    DescendingStratifiedRandom,
    AscendingStratifiedRandom,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 6] = [
        ScheduleKind::DifficultyAscending,
        ScheduleKind::DifficultyDescending,
        ScheduleKind::Bidirectional,
        ScheduleKind::Random,
        ScheduleKind::DescendingStratifiedRandom,
        ScheduleKind::AscendingStratifiedRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::DifficultyAscending => "difficulty-ascending",
            ScheduleKind::DifficultyDescending => "difficulty-descending",
            ScheduleKind::Bidirectional => "bidirectional",
            ScheduleKind::Random => "random",
            ScheduleKind::DescendingStratifiedRandom => "descending-stratified-random",
            ScheduleKind::AscendingStratifiedRandom => "ascending-stratified-random",
        }
    }

    pub fn is_stratified(self) -> bool {
        matches!(
            self,
            ScheduleKind::DescendingStratifiedRandom | ScheduleKind::AscendingStratifiedRandom
        )
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown schedule kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub position: usize,
    pub id: SampleId,
    pub tier: usize,
    pub fused_key: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanHeader {
    pub kind: ScheduleKind,
    pub seed: u64,
    #[serde(rename = "M")]
    pub tiers: usize,
}

/// A full sample ordering for one training pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurriculumPlan {
    pub header: PlanHeader,
    pub order: Vec<PlanEntry>,
}

impl CurriculumPlan {
    pub fn kind(&self) -> ScheduleKind {
        self.header.kind
    }

    pub fn ids(&self) -> impl Iterator<Item = &SampleId> {
        self.order.iter().map(|e| &e.id)
    }

    pub fn tier_of(&self) -> BTreeMap<&SampleId, usize> {
        self.order.iter().map(|e| (&e.id, e.tier)).collect()
    }
}

/// Order the tiered ranking according to `kind`. All randomness comes from
/// one [`SeededRng`] stream keyed by `seed`; stratified kinds shuffle tiers
/// in emission order.
pub fn build_schedule(plan: &TierPlan, kind: ScheduleKind, seed: u64) -> CurriculumPlan {
    let mut rng = SeededRng::new(seed);
    let flat: Vec<(usize, &FusedEntry)> = plan.flat().collect();
    let ordered: Vec<(usize, &FusedEntry)> = match kind {
        ScheduleKind::DifficultyAscending => flat,
        ScheduleKind::DifficultyDescending => flat.into_iter().rev().collect(),
        ScheduleKind::Bidirectional => {
            let mut out = Vec::with_capacity(flat.len());
            let (mut lo, mut hi) = (0, flat.len());
            while lo < hi {
                out.push(flat[lo]);
                lo += 1;
                if lo < hi {
                    hi -= 1;
                    out.push(flat[hi]);
                }
            }
            out
        }
        ScheduleKind::Random => {
            let mut all = flat;
            rng.shuffle(&mut all);
            all
        }
        ScheduleKind::AscendingStratifiedRandom | ScheduleKind::DescendingStratifiedRandom => {
            let tier_order: Vec<usize> = if kind == ScheduleKind::AscendingStratifiedRandom {
                (0..plan.num_tiers()).collect()
            } else {
                (0..plan.num_tiers()).rev().collect()
            };
            let mut out = Vec::with_capacity(flat.len());
            for t in tier_order {
                let mut tier: Vec<(usize, &FusedEntry)> =
                    plan.tiers[t].iter().map(|e| (t, e)).collect();
                rng.shuffle(&mut tier);
                out.extend(tier);
            }
            out
        }
    };
    CurriculumPlan {
        header: PlanHeader {
            kind,
            seed,
            tiers: plan.num_tiers(),
        },
        order: ordered
            .into_iter()
            .enumerate()
            .map(|(position, (tier, e))| PlanEntry {
                position,
                id: e.id.clone(),
                tier,
                fused_key: e.fused_key,
            })
            .collect(),
    }
}

pub fn write_fused_ranking(path: &Path, ranking: &FusedRanking) -> Result<(), IngestError> {
    ingest::write_jsonl(path, None::<&()>, ranking.entries())
}

pub fn read_fused_ranking(path: &Path) -> Result<FusedRanking, IngestError> {
    let entries: Vec<FusedEntry> = ingest::read_jsonl(path)?
        .into_iter()
        .map(|(_, e)| e)
        .collect();
    if entries.is_empty() {
        return Err(IngestError::Empty);
    }
    FusedRanking::from_entries(entries).map_err(|e| IngestError::Malformed {
        line: 0,
        message: e.to_string(),
    })
}

pub fn write_plan(path: &Path, plan: &CurriculumPlan) -> Result<(), IngestError> {
    ingest::write_jsonl(path, Some(&plan.header), &plan.order)
}

pub fn read_plan(path: &Path) -> Result<CurriculumPlan, IngestError> {
    let (header, rows) = ingest::read_jsonl_with_header::<PlanHeader, PlanEntry>(path)?;
    let mut seen = HashSet::new();
    let mut order = Vec::with_capacity(rows.len());
    for (i, (line, e)) in rows.into_iter().enumerate() {
        ingest::check_id(line, &e.id, &mut seen)?;
        if e.position != i || e.tier >= header.tiers {
            return Err(IngestError::Malformed {
                line,
                message: format!("position {} / tier {} out of sequence", e.position, e.tier),
            });
        }
        order.push(e);
    }
    Ok(CurriculumPlan { header, order })
}
