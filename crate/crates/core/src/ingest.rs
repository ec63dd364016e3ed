//! Loading and validation of every external file the pipeline consumes.
//!
//! All inputs are JSON Lines. Blank lines are skipped; line numbers in
//! errors are 1-based positions in the file.

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment_lesson::{PairedEmbeddingSet, TextImagePair};
use crate::trainer::{LabeledSample, LabeledSet};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: empty id")]
    EmptyId { line: usize },
    #[error("no {0} samples present")]
    MissingDomain(Domain),
    #[error("no records")]
    Empty,
    #[error("line {line}: bbox {bbox:?} outside {width}x{height} image")]
    BBoxOutOfBounds {
        line: usize,
        bbox: [u32; 4],
        width: u32,
        height: u32,
    },
    #[error("line {line}: bbox {bbox:?} has zero width or height")]
    DegenerateBBox { line: usize, bbox: [u32; 4] },
    #[error("line {line}: unknown category {category:?}")]
    UnknownCategory { line: usize, category: String },
    #[error("line {line}: image size must be positive")]
    InvalidImageSize { line: usize },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Identifier of one sample, unique within a file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(String);

impl SampleId {
    pub fn new(id: impl Into<String>) -> Self {
        SampleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SampleId {
    fn from(s: &str) -> Self {
        SampleId(s.to_owned())
    }
}

impl From<String> for SampleId {
    fn from(s: String) -> Self {
        SampleId(s)
    }
}

impl Borrow<str> for SampleId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Infrared,
    Visible,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Infrared => "infrared",
            Domain::Visible => "visible",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSample {
    pub id: SampleId,
    pub domain: Domain,
    pub vector: Vec<f64>,
}

/// Embeddings of infrared and visible images sharing one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    samples: Vec<EmbeddingSample>,
}

impl EmbeddingSet {
    /// Validates ids, dimensions and finiteness. The first sample fixes `dim`.
    /// Does not require both domains; see [`EmbeddingSet::require_both_domains`].
    pub fn new(samples: Vec<EmbeddingSample>) -> Result<Self, IngestError> {
        Self::with_lines(samples.into_iter().enumerate().map(|(i, s)| (i + 1, s)))
    }

    fn with_lines(
        rows: impl IntoIterator<Item = (usize, EmbeddingSample)>,
    ) -> Result<Self, IngestError> {
        let mut dim = None;
        let mut seen = HashSet::new();
        let mut samples = Vec::new();
        for (line, s) in rows {
            check_id(line, &s.id, &mut seen)?;
            let expected = *dim.get_or_insert(s.vector.len());
            if expected == 0 || s.vector.len() != expected {
                return Err(IngestError::DimensionMismatch {
                    line,
                    expected: expected.max(1),
                    found: s.vector.len(),
                });
            }
            check_finite(line, &s.vector)?;
            samples.push(s);
        }
        match dim {
            Some(dim) => Ok(Self { dim, samples }),
            None => Err(IngestError::Empty),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[EmbeddingSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &EmbeddingSample> {
        self.samples.iter().filter(move |s| s.domain == domain)
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.domain(domain).count()
    }

    pub fn require_both_domains(&self) -> Result<(), IngestError> {
        for d in [Domain::Infrared, Domain::Visible] {
            if self.count(d) == 0 {
                return Err(IngestError::MissingDomain(d));
            }
        }
        Ok(())
    }
}

/// Load an embeddings file and check it is usable for domain scoring
/// (both domains present).
pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet, IngestError> {
    let rows = read_jsonl::<EmbeddingSample>(path)?;
    let set = EmbeddingSet::with_lines(rows)?;
    set.require_both_domains()?;
    Ok(set)
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<(), IngestError> {
    write_jsonl(path, None::<&()>, set.samples())
}

/// Axis-aligned pixel box, top-left origin, serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn to_array(self) -> [u32; 4] {
        self.into()
    }
}

impl From<[u32; 4]> for BBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub category: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: SampleId,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
}

impl AnnotationRecord {
    /// Checks image size, every bbox, and every category against `vocabulary`.
    /// `line` is used only for error reporting.
    pub fn validate(&self, vocabulary: &BTreeSet<String>, line: usize) -> Result<(), IngestError> {
        if self.width == 0 || self.height == 0 {
            return Err(IngestError::InvalidImageSize { line });
        }
        for obj in &self.objects {
            if obj.bbox.w == 0 || obj.bbox.h == 0 {
                return Err(IngestError::DegenerateBBox {
                    line,
                    bbox: obj.bbox.to_array(),
                });
            }
            if !obj.bbox.fits_within(self.width, self.height) {
                return Err(IngestError::BBoxOutOfBounds {
                    line,
                    bbox: obj.bbox.to_array(),
                    width: self.width,
                    height: self.height,
                });
            }
            if !vocabulary.contains(&obj.category) {
                return Err(IngestError::UnknownCategory {
                    line,
                    category: obj.category.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn count_of(&self, category: &str) -> usize {
        self.objects.iter().filter(|o| o.category == category).count()
    }

    /// Distinct categories present, sorted.
    pub fn categories(&self) -> BTreeSet<&str> {
        self.objects.iter().map(|o| o.category.as_str()).collect()
    }
}

pub fn load_annotations(
    path: &Path,
    vocabulary: &BTreeSet<String>,
) -> Result<Vec<AnnotationRecord>, IngestError> {
    let rows = read_jsonl::<AnnotationRecord>(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        check_id(line, &rec.image_id, &mut seen)?;
        rec.validate(vocabulary, line)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_paired_embeddings(path: &Path) -> Result<PairedEmbeddingSet, IngestError> {
    let rows = read_jsonl::<TextImagePair>(path)?;
    PairedEmbeddingSet::from_rows(rows)
}

pub fn load_labeled_set(path: &Path) -> Result<LabeledSet, IngestError> {
    let rows = read_jsonl::<LabeledSample>(path)?;
    LabeledSet::from_rows(rows)
}

pub(crate) fn check_id(
    line: usize,
    id: &SampleId,
    seen: &mut HashSet<SampleId>,
) -> Result<(), IngestError> {
    if id.as_str().is_empty() {
        return Err(IngestError::EmptyId { line });
    }
    if !seen.insert(id.clone()) {
        return Err(IngestError::DuplicateId {
            line,
            id: id.to_string(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(line: usize, values: &[f64]) -> Result<(), IngestError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(IngestError::NonFinite { line })
    }
}

/// Parse every non-blank line of a JSONL file, paired with its line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| IngestError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&text).map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, value));
    }
    Ok(out)
}

/// Read a JSONL file whose first non-blank line is a header of a different
/// shape from the rows that follow.
pub fn read_jsonl_with_header<H: DeserializeOwned, T: DeserializeOwned>(
    path: &Path,
) -> Result<(H, Vec<(usize, T)>), IngestError> {
    let rows = read_jsonl::<serde_json::Value>(path)?;
    let mut iter = rows.into_iter();
    let (hline, hval) = iter.next().ok_or(IngestError::Empty)?;
    let header = serde_json::from_value(hval).map_err(|e| IngestError::Malformed {
        line: hline,
        message: format!("header: {e}"),
    })?;
    let body = iter
        .map(|(line, v)| {
            serde_json::from_value(v)
                .map(|t| (line, t))
                .map_err(|e| IngestError::Malformed {
                    line,
                    message: e.to_string(),
                })
        })
        .collect::<Result<_, _>>()?;
    Ok((header, body))
}

/// Write an optional header line followed by one JSON object per row.
pub fn write_jsonl<H: Serialize, T: Serialize>(
    path: &Path,
    header: Option<&H>,
    rows: &[T],
) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |value: String| -> std::io::Result<()> {
        w.write_all(value.as_bytes())?;
        w.write_all(b"\n")
    };
    let to_line = |r: Result<String, serde_json::Error>| {
        r.map_err(|e| IngestError::Malformed {
            line: 0,
            message: e.to_string(),
        })
    };
    if let Some(h) = header {
        emit(to_line(serde_json::to_string(h))?).map_err(|e| IngestError::io(path, e))?;
    }
    for row in rows {
        emit(to_line(serde_json::to_string(row))?).map_err(|e| IngestError::io(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn vocab(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn loads_small_embedding_file() {
        let f = file_with(&[
            r#"{"id":"a","domain":"infrared","vector":[1,2,3,4]}"#,
            r#"{"id":"b","domain":"infrared","vector":[0,0,0,0.5]}"#,
            r#"{"id":"c","domain":"visible","vector":[1,1,1,1]}"#,
        ]);
        let set = load_embeddings(f.path()).unwrap();
        assert_eq!(set.dim(), 4);
        assert_eq!(set.len(), 3);
        assert_eq!(set.count(Domain::Infrared), 2);
        let ids: Vec<_> = set.samples().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn dimension_mismatch_names_the_row() {
        let f = file_with(&[
            r#"{"id":"a","domain":"infrared","vector":[1,2,3,4]}"#,
            r#"{"id":"b","domain":"visible","vector":[1,2,3,4]}"#,
            r#"{"id":"c","domain":"visible","vector":[1,2,3]}"#,
        ]);
        match load_embeddings(f.path()) {
            Err(IngestError::DimensionMismatch {
                line: 3,
                expected: 4,
                found: 3,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let f = file_with(&[
            r#"{"id":"a01","domain":"infrared","vector":[1]}"#,
            r#"{"id":"a01","domain":"visible","vector":[2]}"#,
        ]);
        assert!(matches!(
            load_embeddings(f.path()),
            Err(IngestError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn missing_domain_rejected() {
        let f = file_with(&[
            r#"{"id":"a","domain":"infrared","vector":[1]}"#,
            r#"{"id":"b","domain":"infrared","vector":[2]}"#,
        ]);
        assert!(matches!(
            load_embeddings(f.path()),
            Err(IngestError::MissingDomain(Domain::Visible))
        ));
    }

    #[test]
    fn malformed_line_reports_position() {
        let f = file_with(&[
            r#"{"id":"a","domain":"infrared","vector":[1]}"#,
            "",
            r#"{"id":"b","domain":"ultraviolet","vector":[1]}"#,
        ]);
        assert!(matches!(
            load_embeddings(f.path()),
            Err(IngestError::Malformed { line: 3, .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let samples = vec![EmbeddingSample {
            id: "a".into(),
            domain: Domain::Infrared,
            vector: vec![f64::NAN],
        }];
        assert!(matches!(
            EmbeddingSet::new(samples),
            Err(IngestError::NonFinite { line: 1 })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_embeddings(Path::new("/nonexistent/embeddings.jsonl")),
            Err(IngestError::Io { .. })
        ));
    }

    #[test]
    fn annotation_within_bounds_accepted() {
        let f = file_with(&[
            r#"{"image_id":"i1","width":640,"height":512,"objects":[{"category":"person","bbox":[10,10,50,40]}]}"#,
        ]);
        let recs = load_annotations(f.path(), &vocab(&["person", "car"])).unwrap();
        assert_eq!(recs[0].objects[0].bbox, BBox::new(10, 10, 50, 40));
        assert_eq!(recs[0].scene, None);
    }

    #[test]
    fn annotation_out_of_bounds_rejected() {
        let f = file_with(&[
            r#"{"image_id":"i1","width":640,"height":512,"objects":[{"category":"person","bbox":[630,10,50,40]}]}"#,
        ]);
        assert!(matches!(
            load_annotations(f.path(), &vocab(&["person", "car"])),
            Err(IngestError::BBoxOutOfBounds { line: 1, .. })
        ));
    }

    #[test]
    fn annotation_unknown_category_rejected() {
        let f = file_with(&[
            r#"{"image_id":"i1","width":640,"height":512,"objects":[{"category":"dragon","bbox":[1,1,5,5]}]}"#,
        ]);
        match load_annotations(f.path(), &vocab(&["person", "car"])) {
            Err(IngestError::UnknownCategory { category, .. }) => assert_eq!(category, "dragon"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn annotation_negative_coordinate_is_malformed() {
        let f = file_with(&[
            r#"{"image_id":"i1","width":64,"height":64,"objects":[{"category":"car","bbox":[-1,1,5,5]}]}"#,
        ]);
        assert!(matches!(
            load_annotations(f.path(), &vocab(&["car"])),
            Err(IngestError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn zero_area_box_rejected() {
        let rec = AnnotationRecord {
            image_id: "x".into(),
            width: 10,
            height: 10,
            objects: vec![AnnotatedObject {
                category: "car".into(),
                bbox: BBox::new(1, 1, 0, 3),
            }],
            scene: None,
        };
        assert!(matches!(
            rec.validate(&vocab(&["car"]), 1),
            Err(IngestError::DegenerateBBox { .. })
        ));
    }

    #[test]
    fn embeddings_round_trip_full_precision() {
        let samples = vec![
            EmbeddingSample {
                id: "a".into(),
                domain: Domain::Infrared,
                vector: vec![0.1 + 0.2, -1.0 / 3.0, 1e-300],
            },
            EmbeddingSample {
                id: "b".into(),
                domain: Domain::Visible,
                vector: vec![std::f64::consts::PI, 2.0, -0.0],
            },
        ];
        let set = EmbeddingSet::new(samples).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_embeddings(&set, f.path()).unwrap();
        assert_eq!(load_embeddings(f.path()).unwrap(), set);
    }
}
