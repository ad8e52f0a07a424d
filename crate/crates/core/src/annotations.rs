//! Per-frame multi-task annotation parsing, validation and indexing.
//!
//! Annotation files are plain UTF-8 text with LF newlines, one data line per
//! frame (the frame index is implied by line order) and a fixed header:
//!
//! - valence/arousal: header `valence,arousal`, two reals per line
//! - expression: header `expression`, one integer per line
//! - action units: header `au1,...,auK`, K binary flags per line
//!
//! Unlabeled frames carry the absent marker: `-5` for VA components, `-1`
//! for EX and AU entries. Values outside the defined range that are not the
//! absent marker are kept by the parser and turned into "absent" by the
//! validator, which also remembers that an invalid label was present so the
//! contradiction filter can exclude the frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labelfusion::SoftExpression;

/// Absent-label marker for a valence or arousal component.
pub const VA_ABSENT: f64 = -5.0;
/// Absent-label marker for an expression class or an action-unit entry.
pub const LABEL_ABSENT: i64 = -1;

/// Number of basic expression classes.
pub const NUM_EXPRESSIONS: usize = 7;

/// Names of the expression classes, indexed by class index.
pub const EXPRESSION_NAMES: [&str; NUM_EXPRESSIONS] = [
    "neutral",
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
];

/// One of the seven basic expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExpressionLabel(u8);

impl ExpressionLabel {
    pub const NEUTRAL: ExpressionLabel = ExpressionLabel(0);
    pub const ANGER: ExpressionLabel = ExpressionLabel(1);
    pub const DISGUST: ExpressionLabel = ExpressionLabel(2);
    pub const FEAR: ExpressionLabel = ExpressionLabel(3);
    pub const HAPPINESS: ExpressionLabel = ExpressionLabel(4);
    pub const SADNESS: ExpressionLabel = ExpressionLabel(5);
    pub const SURPRISE: ExpressionLabel = ExpressionLabel(6);

    /// Build from a class index; anything outside `0..=6` is rejected.
    pub fn new(class_index: i64) -> Option<ExpressionLabel> {
        (0..NUM_EXPRESSIONS as i64)
            .contains(&class_index)
            .then_some(ExpressionLabel(class_index as u8))
    }

    pub fn class_index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        EXPRESSION_NAMES[self.class_index()]
    }

    /// All seven classes in index order.
    pub fn all() -> impl Iterator<Item = ExpressionLabel> {
        (0..NUM_EXPRESSIONS as u8).map(ExpressionLabel)
    }
}

/// Continuous affect coordinates; valid iff both components lie in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ValenceArousal {
    pub valence: f64,
    pub arousal: f64,
}

impl ValenceArousal {
    pub fn new(valence: f64, arousal: f64) -> ValenceArousal {
        ValenceArousal { valence, arousal }
    }

    pub fn is_valid(&self) -> bool {
        in_va_range(self.valence) && in_va_range(self.arousal)
    }
}

fn in_va_range(x: f64) -> bool {
    x.is_finite() && (-1.0..=1.0).contains(&x)
}

/// Fixed-length vector of binary action-unit activations.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ActionUnits {
    activations: Vec<u8>,
}

impl ActionUnits {
    /// Build from raw entries; the whole vector is invalid if any entry is
    /// outside {0, 1}.
    pub fn new(entries: &[i64]) -> Option<ActionUnits> {
        entries
            .iter()
            .map(|&e| match e {
                0 => Some(0u8),
                1 => Some(1u8),
                _ => None,
            })
            .collect::<Option<Vec<u8>>>()
            .map(|activations| ActionUnits { activations })
    }

    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn activations(&self) -> &[u8] {
        &self.activations
    }

    pub fn is_active(&self, unit: usize) -> bool {
        self.activations[unit] == 1
    }
}

/// Raw per-frame labels as read from the annotation files, before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawLabels {
    pub va: Option<(f64, f64)>,
    pub ex: Option<i64>,
    pub au: Option<Vec<i64>>,
}

/// Validated multi-task label state for a single frame on a 30 fps timeline.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub va: Option<ValenceArousal>,
    pub ex: Option<ExpressionLabel>,
    pub au: Option<ActionUnits>,
    /// Soft expression label (probability vector), filled by pseudo-labeling.
    pub soft_ex: Option<SoftExpression>,
    /// Pseudo valence, sampled from the cross-task histograms.
    pub pseudo_valence: Option<f64>,
    /// Pseudo arousal; stays absent under the valence-only policy.
    pub pseudo_arousal: Option<f64>,
    /// The raw file carried a VA label that was out of range (not the
    /// absent marker).
    pub raw_invalid_va: bool,
    /// The raw file carried an EX label that was out of range.
    pub raw_invalid_ex: bool,
    /// Set by the contradiction filter; excluded frames take no part in
    /// histogram building, pseudo-labeling or training.
    pub excluded: bool,
}

impl FrameRecord {
    /// Frame time in seconds on the 30 fps timeline.
    pub fn time_seconds(&self, fps: f64) -> f64 {
        self.frame_index as f64 / fps
    }

    /// Re-apply the validation rules to the already-validated fields.
    /// Validation is idempotent, so this returns an identical record.
    pub fn revalidate(&self) -> FrameRecord {
        let mut r = self.clone();
        r.va = self.va.filter(ValenceArousal::is_valid);
        r.ex = self
            .ex
            .and_then(|e| ExpressionLabel::new(e.class_index() as i64));
        r.au = self.au.as_ref().and_then(|au| {
            let entries: Vec<i64> = au.activations().iter().map(|&b| b as i64).collect();
            ActionUnits::new(&entries)
        });
        r
    }

    /// Map the validated labels back to raw form (absent markers restored).
    /// `au_len` sets the vector length when the AU label is absent.
    pub fn to_raw(&self, au_len: usize) -> RawLabels {
        RawLabels {
            va: Some(
                self.va
                    .map_or((VA_ABSENT, VA_ABSENT), |va| (va.valence, va.arousal)),
            ),
            ex: Some(self.ex.map_or(LABEL_ABSENT, |e| e.class_index() as i64)),
            au: Some(self.au.as_ref().map_or_else(
                || vec![LABEL_ABSENT; au_len],
                |au| au.activations().iter().map(|&b| b as i64).collect(),
            )),
        }
    }
}

/// Turn raw labels into a validated [`FrameRecord`].
///
/// Invalid labels become absent rather than errors: an out-of-range value
/// marks unusable training data, not corpus corruption. Out-of-range values
/// that are not the absent marker additionally set the `raw_invalid_*` flag
/// consumed by the contradiction filter.
pub fn validate_record(video_id: &str, frame_index: u32, raw: &RawLabels) -> FrameRecord {
    let mut record = FrameRecord {
        video_id: video_id.to_string(),
        frame_index,
        va: None,
        ex: None,
        au: None,
        soft_ex: None,
        pseudo_valence: None,
        pseudo_arousal: None,
        raw_invalid_va: false,
        raw_invalid_ex: false,
        excluded: false,
    };

    if let Some((v, a)) = raw.va {
        if v == VA_ABSENT || a == VA_ABSENT {
            // unlabeled frame
        } else {
            let va = ValenceArousal::new(v, a);
            if va.is_valid() {
                record.va = Some(va);
            } else {
                record.raw_invalid_va = true;
            }
        }
    }

    if let Some(e) = raw.ex {
        if e != LABEL_ABSENT {
            match ExpressionLabel::new(e) {
                Some(ex) => record.ex = Some(ex),
                None => record.raw_invalid_ex = true,
            }
        }
    }

    if let Some(entries) = &raw.au {
        if !entries.iter().all(|&e| e == LABEL_ABSENT) {
            record.au = ActionUnits::new(entries);
        }
    }

    record
}

/// Which annotation file layout to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationKind {
    Va,
    Ex,
    Au,
}

impl AnnotationKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            AnnotationKind::Va => "va",
            AnnotationKind::Ex => "ex",
            AnnotationKind::Au => "au",
        }
    }
}

/// Parsed contents of one annotation file (one video, one task).
#[derive(Debug, Clone, PartialEq)]
pub enum AnnotationFile {
    Va(Vec<(f64, f64)>),
    Ex(Vec<i64>),
    /// Entries per frame; the inner length is the AU count from the header.
    Au(Vec<Vec<i64>>),
}

impl AnnotationFile {
    pub fn len(&self) -> usize {
        match self {
            AnnotationFile::Va(v) => v.len(),
            AnnotationFile::Ex(v) => v.len(),
            AnnotationFile::Au(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parse one annotation file. Out-of-range values are preserved as-is for
/// the validator; only structural problems (bad header, non-numeric fields,
/// ragged AU rows) are errors.
pub fn parse_annotation_file(path: &Path, kind: AnnotationKind) -> Result<AnnotationFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation_text(&text, kind).map_err(|e| match e {
        Error::Format { line, message, .. } => Error::Format {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

/// Parse annotation file contents from a string. See [`parse_annotation_file`].
pub fn parse_annotation_text(text: &str, kind: AnnotationKind) -> Result<AnnotationFile> {
    let format_err = |line: usize, message: String| Error::Format {
        path: "<string>".into(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(1, "empty file, missing header".into()))?;

    let au_count = match kind {
        AnnotationKind::Va => {
            if header != "valence,arousal" {
                return Err(format_err(
                    1,
                    format!("expected header 'valence,arousal', got '{header}'"),
                ));
            }
            0
        }
        AnnotationKind::Ex => {
            if header != "expression" {
                return Err(format_err(
                    1,
                    format!("expected header 'expression', got '{header}'"),
                ));
            }
            0
        }
        AnnotationKind::Au => {
            let fields: Vec<&str> = header.split(',').collect();
            let ok = !fields.is_empty()
                && fields
                    .iter()
                    .enumerate()
                    .all(|(i, f)| *f == format!("au{}", i + 1));
            if !ok {
                return Err(format_err(
                    1,
                    format!("expected header 'au1,...,auK', got '{header}'"),
                ));
            }
            fields.len()
        }
    };

    match kind {
        AnnotationKind::Va => {
            let mut rows = Vec::new();
            for (idx, line) in lines {
                let lineno = idx + 1;
                let mut parts = line.split(',');
                let (v, a) = match (parts.next(), parts.next(), parts.next()) {
                    (Some(v), Some(a), None) => (v, a),
                    _ => {
                        return Err(format_err(
                            lineno,
                            format!("expected 2 comma-separated values, got '{line}'"),
                        ))
                    }
                };
                let v: f64 = v.trim().parse().map_err(|_| {
                    format_err(lineno, format!("non-numeric valence '{}'", v.trim()))
                })?;
                let a: f64 = a.trim().parse().map_err(|_| {
                    format_err(lineno, format!("non-numeric arousal '{}'", a.trim()))
                })?;
                rows.push((v, a));
            }
            Ok(AnnotationFile::Va(rows))
        }
        AnnotationKind::Ex => {
            let mut rows = Vec::new();
            for (idx, line) in lines {
                let lineno = idx + 1;
                let e: i64 = line.trim().parse().map_err(|_| {
                    format_err(lineno, format!("non-integer expression '{}'", line.trim()))
                })?;
                rows.push(e);
            }
            Ok(AnnotationFile::Ex(rows))
        }
        AnnotationKind::Au => {
            let mut rows = Vec::new();
            for (idx, line) in lines {
                let lineno = idx + 1;
                let entries: Vec<i64> = line
                    .split(',')
                    .map(|f| {
                        f.trim().parse::<i64>().map_err(|_| {
                            format_err(lineno, format!("non-integer action unit '{}'", f.trim()))
                        })
                    })
                    .collect::<Result<_>>()?;
                if entries.len() != au_count {
                    return Err(format_err(
                        lineno,
                        format!("expected {au_count} entries, got {}", entries.len()),
                    ));
                }
                rows.push(entries);
            }
            Ok(AnnotationFile::Au(rows))
        }
    }
}

/// Serialize an annotation file back to text (LF newlines, trailing newline).
pub fn write_annotation_text(file: &AnnotationFile) -> String {
    let mut out = String::new();
    match file {
        AnnotationFile::Va(rows) => {
            out.push_str("valence,arousal\n");
            for (v, a) in rows {
                let _ = writeln!(out, "{v},{a}");
            }
        }
        AnnotationFile::Ex(rows) => {
            out.push_str("expression\n");
            for e in rows {
                let _ = writeln!(out, "{e}");
            }
        }
        AnnotationFile::Au(rows) => {
            let k = rows.first().map_or(1, Vec::len);
            let header: Vec<String> = (1..=k).map(|i| format!("au{i}")).collect();
            out.push_str(&header.join(","));
            out.push('\n');
            for entries in rows {
                let fields: Vec<String> = entries.iter().map(i64::to_string).collect();
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
    }
    out
}

/// Align the three per-task files of one video into validated frame records.
///
/// Missing files mean the video is unlabeled for that task. Files that are
/// present must agree on the frame count.
pub fn records_from_files(
    video_id: &str,
    va: Option<&AnnotationFile>,
    ex: Option<&AnnotationFile>,
    au: Option<&AnnotationFile>,
) -> Result<Vec<FrameRecord>> {
    let lens: Vec<usize> = [va, ex, au].iter().flatten().map(|f| f.len()).collect();
    let n = lens.iter().copied().max().unwrap_or(0);
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Index(format!(
            "video '{video_id}': annotation files disagree on frame count: {lens:?}"
        )));
    }

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let raw = RawLabels {
            va: va.map(|f| match f {
                AnnotationFile::Va(rows) => rows[i],
                _ => unreachable!("va slot holds a VA file"),
            }),
            ex: ex.map(|f| match f {
                AnnotationFile::Ex(rows) => rows[i],
                _ => unreachable!("ex slot holds an EX file"),
            }),
            au: au.map(|f| match f {
                AnnotationFile::Au(rows) => rows[i].clone(),
                _ => unreachable!("au slot holds an AU file"),
            }),
        };
        records.push(validate_record(video_id, i as u32, &raw));
    }
    Ok(records)
}

/// Count of records carrying a valid label, per task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TaskCounts {
    pub va: usize,
    pub ex: usize,
    pub au: usize,
}

/// Immutable, ordered view of a validated corpus.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetIndex {
    videos: BTreeMap<String, Vec<FrameRecord>>,
    counts: TaskCounts,
    total: usize,
}

impl DatasetIndex {
    pub fn counts(&self) -> TaskCounts {
        self.counts
    }

    pub fn total_records(&self) -> usize {
        self.total
    }

    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn video(&self, video_id: &str) -> Option<&[FrameRecord]> {
        self.videos.get(video_id).map(Vec::as_slice)
    }

    /// Videos in lexicographic id order.
    pub fn videos(&self) -> impl Iterator<Item = (&str, &[FrameRecord])> {
        self.videos.iter().map(|(id, recs)| (id.as_str(), recs.as_slice()))
    }

    /// All records, video by video, frames in order.
    pub fn records(&self) -> impl Iterator<Item = &FrameRecord> {
        self.videos.values().flatten()
    }

    /// Rebuild the index with transformed records. Grouping keys must be
    /// preserved by the transform.
    pub fn map_records(&self, mut f: impl FnMut(&FrameRecord) -> FrameRecord) -> Result<DatasetIndex> {
        build_dataset_index(self.records().map(&mut f).collect())
    }
}

/// Group validated records into a [`DatasetIndex`].
///
/// Records must be sorted by (video_id, frame_index); duplicate or
/// out-of-order frame indices within a video are index errors.
pub fn build_dataset_index(records: Vec<FrameRecord>) -> Result<DatasetIndex> {
    let mut videos: BTreeMap<String, Vec<FrameRecord>> = BTreeMap::new();
    let mut counts = TaskCounts::default();
    let mut total = 0usize;

    for record in records {
        counts.va += record.va.is_some() as usize;
        counts.ex += record.ex.is_some() as usize;
        counts.au += record.au.is_some() as usize;
        total += 1;

        let frames = videos.entry(record.video_id.clone()).or_default();
        if let Some(last) = frames.last() {
            if record.frame_index == last.frame_index {
                return Err(Error::Index(format!(
                    "duplicate frame {} in video '{}'",
                    record.frame_index, record.video_id
                )));
            }
            if record.frame_index < last.frame_index {
                return Err(Error::Index(format!(
                    "frame {} out of order after {} in video '{}'",
                    record.frame_index, last.frame_index, record.video_id
                )));
            }
        }
        frames.push(record);
    }

    Ok(DatasetIndex {
        videos,
        counts,
        total,
    })
}
