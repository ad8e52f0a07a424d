//! Cross-task label fusion: valence-arousal histograms per expression,
//! pseudo/soft label generation and contradiction filtering.
//!
//! The per-expression 2D histograms over the valence-arousal square are the
//! shared data structure: pseudo VA labels are sampled from the histogram of
//! the frame's expression, and soft expression labels are the normalized
//! per-expression counts of the bin containing the frame's VA label.

use std::fmt::Write as _;

use rand::Rng;

use crate::annotations::{
    DatasetIndex, ExpressionLabel, FrameRecord, ValenceArousal, NUM_EXPRESSIONS,
};
use crate::error::{Error, Result};

/// Probability vector over the seven expression classes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SoftExpression {
    probs: [f64; NUM_EXPRESSIONS],
}

impl SoftExpression {
    /// Sum tolerance for a well-formed probability vector.
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: [f64; NUM_EXPRESSIONS]) -> Result<SoftExpression> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Shape(format!("probabilities out of [0,1]: {probs:?}")));
        }
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Shape(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(SoftExpression { probs })
    }

    /// Normalize raw bin counts into probabilities.
    pub fn from_counts(counts: [u64; NUM_EXPRESSIONS]) -> Result<SoftExpression> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyDistribution(
                "no expression has mass in this bin".into(),
            ));
        }
        let mut probs = [0.0; NUM_EXPRESSIONS];
        for (p, &n) in probs.iter_mut().zip(&counts) {
            *p = n as f64 / total as f64;
        }
        Ok(SoftExpression { probs })
    }

    /// One-hot vector for a hard label.
    pub fn one_hot(ex: ExpressionLabel) -> SoftExpression {
        let mut probs = [0.0; NUM_EXPRESSIONS];
        probs[ex.class_index()] = 1.0;
        SoftExpression { probs }
    }

    pub fn probs(&self) -> &[f64; NUM_EXPRESSIONS] {
        &self.probs
    }
}

/// Per-expression 2D histograms over the valence-arousal square [-1,1]².
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VaHistogramSet {
    bins_per_axis: usize,
    /// Flat grids, one per expression; index = arousal_bin * bins + valence_bin.
    counts: Vec<Vec<u64>>,
    totals: [u64; NUM_EXPRESSIONS],
}

impl VaHistogramSet {
    pub const DEFAULT_BINS: usize = 20;

    pub fn new(bins_per_axis: usize) -> Result<VaHistogramSet> {
        if bins_per_axis == 0 {
            return Err(Error::Config("bins_per_axis must be >= 1".into()));
        }
        Ok(VaHistogramSet {
            bins_per_axis,
            counts: vec![vec![0; bins_per_axis * bins_per_axis]; NUM_EXPRESSIONS],
            totals: [0; NUM_EXPRESSIONS],
        })
    }

    pub fn bins_per_axis(&self) -> usize {
        self.bins_per_axis
    }

    pub fn totals(&self) -> &[u64; NUM_EXPRESSIONS] {
        &self.totals
    }

    /// Bin index of a coordinate in [-1, 1]; the value 1.0 falls in the last
    /// bin.
    pub fn bin_of(&self, x: f64) -> usize {
        let b = self.bins_per_axis as f64;
        (((x + 1.0) / 2.0 * b) as usize).min(self.bins_per_axis - 1)
    }

    /// Half-open coordinate range [lo, hi) of a bin (the last bin is closed).
    pub fn bin_range(&self, bin: usize) -> (f64, f64) {
        let width = 2.0 / self.bins_per_axis as f64;
        let lo = -1.0 + bin as f64 * width;
        (lo, lo + width)
    }

    pub fn add(&mut self, ex: ExpressionLabel, va: ValenceArousal) {
        let idx = self.flat_index(self.bin_of(va.valence), self.bin_of(va.arousal));
        self.counts[ex.class_index()][idx] += 1;
        self.totals[ex.class_index()] += 1;
    }

    pub fn count_in_bin(&self, ex: ExpressionLabel, valence_bin: usize, arousal_bin: usize) -> u64 {
        self.counts[ex.class_index()][self.flat_index(valence_bin, arousal_bin)]
    }

    /// Counts of every expression in the bin containing (v, a).
    pub fn counts_at(&self, va: ValenceArousal) -> [u64; NUM_EXPRESSIONS] {
        let idx = self.flat_index(self.bin_of(va.valence), self.bin_of(va.arousal));
        let mut out = [0; NUM_EXPRESSIONS];
        for (o, grid) in out.iter_mut().zip(&self.counts) {
            *o = grid[idx];
        }
        out
    }

    /// Merge another histogram set into this one. Merging is associative and
    /// commutative, so per-video partial grids can be reduced in any order.
    pub fn merge(&mut self, other: &VaHistogramSet) -> Result<()> {
        if other.bins_per_axis != self.bins_per_axis {
            return Err(Error::Shape(format!(
                "cannot merge histograms with {} and {} bins",
                self.bins_per_axis, other.bins_per_axis
            )));
        }
        for (mine, theirs) in self.counts.iter_mut().zip(&other.counts) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += t;
            }
        }
        for (m, t) in self.totals.iter_mut().zip(&other.totals) {
            *m += t;
        }
        Ok(())
    }

    fn flat_index(&self, valence_bin: usize, arousal_bin: usize) -> usize {
        arousal_bin * self.bins_per_axis + valence_bin
    }

    /// Text grid for one expression: rows are arousal bins from +1 down to
    /// -1, columns are valence bins from -1 to +1.
    pub fn export_grid(&self, ex: ExpressionLabel) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# {} total={} bins={}",
            ex.name(),
            self.totals[ex.class_index()],
            self.bins_per_axis
        );
        for arousal_bin in (0..self.bins_per_axis).rev() {
            let row: Vec<String> = (0..self.bins_per_axis)
                .map(|valence_bin| self.count_in_bin(ex, valence_bin, arousal_bin).to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// JSON summary: bin count and per-expression totals.
    pub fn summary_json(&self) -> serde_json::Value {
        let totals: serde_json::Map<String, serde_json::Value> = ExpressionLabel::all()
            .map(|ex| {
                (
                    ex.name().to_string(),
                    serde_json::Value::from(self.totals[ex.class_index()]),
                )
            })
            .collect();
        serde_json::json!({
            "bins_per_axis": self.bins_per_axis,
            "totals": totals,
            "grand_total": self.totals.iter().sum::<u64>(),
        })
    }
}

/// Build per-expression VA histograms from a corpus.
///
/// Only frames carrying BOTH a valid expression and a valid VA label
/// contribute; excluded frames are skipped (the contradiction filter runs
/// before histogram building so contradictory frames never seed the
/// distributions).
pub fn build_va_histograms(index: &DatasetIndex, bins: usize) -> Result<VaHistogramSet> {
    let mut hist = VaHistogramSet::new(bins)?;
    for record in index.records() {
        if record.excluded {
            continue;
        }
        if let (Some(ex), Some(va)) = (record.ex, record.va) {
            hist.add(ex, va);
        }
    }
    Ok(hist)
}

/// Draw a (valence, arousal) pseudo label for an expression.
///
/// A bin is selected with probability proportional to its count, then the
/// coordinates are drawn uniformly inside the bin. Callers re-sample on
/// every epoch pass; the draw is reproducible given the rng state.
pub fn sample_pseudo_va(
    hist: &VaHistogramSet,
    ex: ExpressionLabel,
    rng: &mut impl Rng,
) -> Result<ValenceArousal> {
    let total = hist.totals()[ex.class_index()];
    if total == 0 {
        return Err(Error::EmptyDistribution(format!(
            "no (EX, VA) samples for expression '{}'",
            ex.name()
        )));
    }

    let mut remaining = rng.random_range(0..total);
    let bins = hist.bins_per_axis();
    for arousal_bin in 0..bins {
        for valence_bin in 0..bins {
            let n = hist.count_in_bin(ex, valence_bin, arousal_bin);
            if remaining < n {
                let (v_lo, v_hi) = hist.bin_range(valence_bin);
                let (a_lo, a_hi) = hist.bin_range(arousal_bin);
                let v = v_lo + rng.random::<f64>() * (v_hi - v_lo);
                let a = a_lo + rng.random::<f64>() * (a_hi - a_lo);
                return Ok(ValenceArousal::new(v, a));
            }
            remaining -= n;
        }
    }
    unreachable!("cumulative counts cover the draw range");
}

/// Soft expression label for a VA coordinate: the per-expression histogram
/// counts of the containing bin, normalized to probabilities.
pub fn soft_expression(hist: &VaHistogramSet, va: ValenceArousal) -> Result<SoftExpression> {
    if !va.is_valid() {
        return Err(Error::Shape(format!(
            "VA ({}, {}) outside [-1,1]²",
            va.valence, va.arousal
        )));
    }
    SoftExpression::from_counts(hist.counts_at(va))
}

/// Which contradiction rule excluded a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    /// A VA or EX label was present in the raw file but out of range.
    InvalidLabel,
    /// Labeled happy but with negative valence.
    HappyNegativeValence,
    /// Labeled sad but with positive valence.
    SadPositiveValence,
    /// Labeled neutral but sqrt(v² + a²) > 0.5.
    NeutralHighNorm,
}

/// Outcome counts of a filtering pass; the counts sum to the input size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FilterReport {
    pub removed_invalid: usize,
    pub removed_happy_neg: usize,
    pub removed_sad_pos: usize,
    pub removed_neutral_highnorm: usize,
    pub kept: usize,
}

impl FilterReport {
    pub fn removed(&self) -> usize {
        self.removed_invalid
            + self.removed_happy_neg
            + self.removed_sad_pos
            + self.removed_neutral_highnorm
    }

    pub fn total(&self) -> usize {
        self.removed() + self.kept
    }

    fn record(&mut self, rule: Option<FilterRule>) {
        match rule {
            None => self.kept += 1,
            Some(FilterRule::InvalidLabel) => self.removed_invalid += 1,
            Some(FilterRule::HappyNegativeValence) => self.removed_happy_neg += 1,
            Some(FilterRule::SadPositiveValence) => self.removed_sad_pos += 1,
            Some(FilterRule::NeutralHighNorm) => self.removed_neutral_highnorm += 1,
        }
    }
}

/// Apply the contradiction rules to a single record. Returns the record with
/// the `excluded` flag set and the rule that fired, if any. Rules are checked
/// in order: invalid label, happy/negative, sad/positive, neutral/high-norm.
pub fn filter_record(record: &FrameRecord) -> (FrameRecord, Option<FilterRule>) {
    let rule = filter_rule_for(record);
    let mut out = record.clone();
    out.excluded = rule.is_some();
    (out, rule)
}

fn filter_rule_for(record: &FrameRecord) -> Option<FilterRule> {
    if record.raw_invalid_va || record.raw_invalid_ex {
        return Some(FilterRule::InvalidLabel);
    }
    if let (Some(ex), Some(va)) = (record.ex, record.va) {
        if ex == ExpressionLabel::HAPPINESS && va.valence < 0.0 {
            return Some(FilterRule::HappyNegativeValence);
        }
        if ex == ExpressionLabel::SADNESS && va.valence > 0.0 {
            return Some(FilterRule::SadPositiveValence);
        }
        if ex == ExpressionLabel::NEUTRAL && (va.valence.powi(2) + va.arousal.powi(2)).sqrt() > 0.5
        {
            return Some(FilterRule::NeutralHighNorm);
        }
    }
    None
}

/// Filter every record of a corpus. Returns the filtered index and the
/// per-rule removal counts.
pub fn filter_index(index: &DatasetIndex) -> Result<(DatasetIndex, FilterReport)> {
    let mut report = FilterReport::default();
    let filtered = index.map_records(|record| {
        let (out, rule) = filter_record(record);
        report.record(rule);
        out
    })?;
    Ok((filtered, report))
}

/// Which pseudo labels to generate for partially labeled frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoPolicy {
    /// Leave the corpus unchanged.
    None,
    /// Frames with EX but no VA get a sampled valence; arousal stays absent.
    #[default]
    ValenceOnly,
    /// Frames with EX but no VA get both sampled components.
    Va,
    /// As `Va`, plus frames with VA but no EX get a soft expression label.
    VaEx,
}

impl PseudoPolicy {
    pub fn parse(s: &str) -> Option<PseudoPolicy> {
        match s {
            "none" => Some(PseudoPolicy::None),
            "valence" | "valence-only" => Some(PseudoPolicy::ValenceOnly),
            "va" => Some(PseudoPolicy::Va),
            "va+ex" => Some(PseudoPolicy::VaEx),
            _ => None,
        }
    }
}

/// Fill pseudo/soft label slots across a corpus according to `policy`.
///
/// Excluded frames never receive pseudo labels, and existing valid labels
/// are never overwritten. Empty-distribution errors from the sampler
/// propagate to the caller.
pub fn apply_pseudo_policy(
    index: &DatasetIndex,
    hist: &VaHistogramSet,
    policy: PseudoPolicy,
    rng: &mut impl Rng,
) -> Result<DatasetIndex> {
    if policy == PseudoPolicy::None {
        return Ok(index.clone());
    }

    let mut first_error = None;
    let mapped = index.map_records(|record| {
        let mut out = record.clone();
        if out.excluded || first_error.is_some() {
            return out;
        }

        if out.va.is_none() && !matches!(policy, PseudoPolicy::None) {
            if let Some(ex) = out.ex {
                match sample_pseudo_va(hist, ex, rng) {
                    Ok(va) => {
                        out.pseudo_valence = Some(va.valence);
                        if matches!(policy, PseudoPolicy::Va | PseudoPolicy::VaEx) {
                            out.pseudo_arousal = Some(va.arousal);
                        }
                    }
                    Err(e) => first_error = Some(e),
                }
            }
        }

        if policy == PseudoPolicy::VaEx && out.ex.is_none() && out.soft_ex.is_none() {
            if let Some(va) = out.va {
                match soft_expression(hist, va) {
                    Ok(soft) => out.soft_ex = Some(soft),
                    Err(e) => first_error = Some(e),
                }
            }
        }
        out
    })?;

    match first_error {
        Some(e) => Err(e),
        None => Ok(mapped),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{build_dataset_index, validate_record, RawLabels};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(video: &str, frame: u32, va: Option<(f64, f64)>, ex: Option<i64>) -> FrameRecord {
        validate_record(
            video,
            frame,
            &RawLabels {
                va,
                ex,
                au: None,
            },
        )
    }

    fn index_of(records: Vec<FrameRecord>) -> DatasetIndex {
        build_dataset_index(records).unwrap()
    }

    #[test]
    fn single_frame_lands_in_upper_right_bin() {
        let index = index_of(vec![record("v", 0, Some((0.5, 0.5)), Some(4))]);
        let hist = build_va_histograms(&index, 2).unwrap();
        assert_eq!(hist.count_in_bin(ExpressionLabel::HAPPINESS, 1, 1), 1);
        let all: u64 = ExpressionLabel::all()
            .map(|ex| {
                (0..2)
                    .flat_map(|v| (0..2).map(move |a| (v, a)))
                    .map(|(v, a)| hist.count_in_bin(ex, v, a))
                    .sum::<u64>()
            })
            .sum();
        assert_eq!(all, 1);
    }

    #[test]
    fn frame_without_va_contributes_nothing() {
        let index = index_of(vec![record("v", 0, None, Some(4))]);
        let hist = build_va_histograms(&index, 4).unwrap();
        assert_eq!(hist.totals().iter().sum::<u64>(), 0);
    }

    #[test]
    fn value_one_falls_in_last_bin() {
        let hist = VaHistogramSet::new(20).unwrap();
        assert_eq!(hist.bin_of(1.0), 19);
        assert_eq!(hist.bin_of(-1.0), 0);
        assert_eq!(hist.bin_of(0.0), 10);
    }

    #[test]
    fn histogram_recovers_gaussian_class_means() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let means = [(0.6f64, 0.3f64), (-0.5, -0.2), (0.0, 0.0)];
        let classes = [
            ExpressionLabel::HAPPINESS,
            ExpressionLabel::SADNESS,
            ExpressionLabel::NEUTRAL,
        ];

        let mut records = Vec::new();
        for i in 0..10_000u32 {
            let c = (i as usize) % 3;
            let nv = Normal::new(means[c].0, 0.1).unwrap();
            let na = Normal::new(means[c].1, 0.1).unwrap();
            let v = nv.sample(&mut rng).clamp(-1.0, 1.0);
            let a = na.sample(&mut rng).clamp(-1.0, 1.0);
            records.push(record("v", i, Some((v, a)), Some(classes[c].class_index() as i64)));
        }
        let index = index_of(records);
        let hist = build_va_histograms(&index, 20).unwrap();

        for (c, ex) in classes.iter().enumerate() {
            let mut v_sum = 0.0;
            let mut a_sum = 0.0;
            let mut n = 0.0;
            for vb in 0..20 {
                for ab in 0..20 {
                    let count = hist.count_in_bin(*ex, vb, ab) as f64;
                    let (v_lo, v_hi) = hist.bin_range(vb);
                    let (a_lo, a_hi) = hist.bin_range(ab);
                    v_sum += count * (v_lo + v_hi) / 2.0;
                    a_sum += count * (a_lo + a_hi) / 2.0;
                    n += count;
                }
            }
            assert!((v_sum / n - means[c].0).abs() < 0.05, "valence centroid off for class {c}");
            assert!((a_sum / n - means[c].1).abs() < 0.05, "arousal centroid off for class {c}");
        }
    }

    #[test]
    fn forced_bin_sampling_stays_inside() {
        // Single nonzero bin covering [0, 0.1)²: bins=20 puts bin 10 at [0, 0.1).
        let mut hist = VaHistogramSet::new(20).unwrap();
        hist.add(ExpressionLabel::HAPPINESS, ValenceArousal::new(0.05, 0.05));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let va = sample_pseudo_va(&hist, ExpressionLabel::HAPPINESS, &mut rng).unwrap();
            assert!((0.0..0.1).contains(&va.valence), "valence {}", va.valence);
            assert!((0.0..0.1).contains(&va.arousal), "arousal {}", va.arousal);
        }
    }

    #[test]
    fn two_equal_bins_split_evenly() {
        let mut hist = VaHistogramSet::new(2).unwrap();
        for _ in 0..50 {
            hist.add(ExpressionLabel::FEAR, ValenceArousal::new(-0.5, -0.5));
            hist.add(ExpressionLabel::FEAR, ValenceArousal::new(0.5, 0.5));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let mut low = 0usize;
        for _ in 0..draws {
            let va = sample_pseudo_va(&hist, ExpressionLabel::FEAR, &mut rng).unwrap();
            if va.valence < 0.0 {
                low += 1;
            }
        }
        let frac = low as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.01, "empirical split {frac}");
    }

    #[test]
    fn empty_class_errors() {
        let hist = VaHistogramSet::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_pseudo_va(&hist, ExpressionLabel::FEAR, &mut rng).unwrap_err();
        assert!(matches!(err, Error::EmptyDistribution(_)));
    }

    #[test]
    fn soft_label_single_class_is_one_hot() {
        let mut hist = VaHistogramSet::new(4).unwrap();
        hist.add(ExpressionLabel::HAPPINESS, ValenceArousal::new(0.3, 0.3));
        let soft = soft_expression(&hist, ValenceArousal::new(0.3, 0.3)).unwrap();
        assert_eq!(
            soft.probs(),
            SoftExpression::one_hot(ExpressionLabel::HAPPINESS).probs()
        );
    }

    #[test]
    fn soft_label_three_to_one_counts() {
        let mut hist = VaHistogramSet::new(4).unwrap();
        for _ in 0..3 {
            hist.add(ExpressionLabel::HAPPINESS, ValenceArousal::new(0.3, 0.3));
        }
        hist.add(ExpressionLabel::NEUTRAL, ValenceArousal::new(0.3, 0.3));
        let soft = soft_expression(&hist, ValenceArousal::new(0.3, 0.3)).unwrap();
        assert_eq!(soft.probs()[ExpressionLabel::HAPPINESS.class_index()], 0.75);
        assert_eq!(soft.probs()[ExpressionLabel::NEUTRAL.class_index()], 0.25);
    }

    #[test]
    fn soft_label_uniform_counts() {
        let mut hist = VaHistogramSet::new(4).unwrap();
        for ex in ExpressionLabel::all() {
            hist.add(ex, ValenceArousal::new(-0.1, -0.1));
        }
        let soft = soft_expression(&hist, ValenceArousal::new(-0.1, -0.1)).unwrap();
        for p in soft.probs() {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_label_empty_bin_errors() {
        let mut hist = VaHistogramSet::new(4).unwrap();
        hist.add(ExpressionLabel::HAPPINESS, ValenceArousal::new(0.9, 0.9));
        let err = soft_expression(&hist, ValenceArousal::new(-0.9, -0.9)).unwrap_err();
        assert!(matches!(err, Error::EmptyDistribution(_)));
    }

    #[test]
    fn happy_with_negative_valence_is_excluded() {
        let (out, rule) = filter_record(&record("v", 0, Some((-0.3, 0.0)), Some(4)));
        assert!(out.excluded);
        assert_eq!(rule, Some(FilterRule::HappyNegativeValence));
    }

    #[test]
    fn neutral_high_norm_is_excluded() {
        // norm = sqrt(0.36 + 0.16) ≈ 0.721 > 0.5
        let (out, rule) = filter_record(&record("v", 0, Some((0.6, 0.4)), Some(0)));
        assert!(out.excluded);
        assert_eq!(rule, Some(FilterRule::NeutralHighNorm));
    }

    #[test]
    fn consistent_sad_frame_is_kept() {
        let (out, rule) = filter_record(&record("v", 0, Some((-0.5, 0.1)), Some(5)));
        assert!(!out.excluded);
        assert_eq!(rule, None);
    }

    #[test]
    fn invalid_raw_label_is_excluded() {
        let (_, rule) = filter_record(&record("v", 0, Some((3.0, 0.0)), Some(1)));
        assert_eq!(rule, Some(FilterRule::InvalidLabel));
        let (_, rule) = filter_record(&record("v", 0, Some((0.1, 0.1)), Some(9)));
        assert_eq!(rule, Some(FilterRule::InvalidLabel));
    }

    /// Straight-line restatement of the four contradiction rules, used as a
    /// brute-force oracle.
    fn filter_oracle(record: &FrameRecord) -> bool {
        if record.raw_invalid_va || record.raw_invalid_ex {
            return true;
        }
        let (ex, va) = match (record.ex, record.va) {
            (Some(ex), Some(va)) => (ex, va),
            _ => return false,
        };
        let happy = ex.class_index() == 4 && va.valence < 0.0;
        let sad = ex.class_index() == 5 && va.valence > 0.0;
        let neutral = ex.class_index() == 0
            && (va.valence * va.valence + va.arousal * va.arousal).sqrt() > 0.5;
        happy || sad || neutral
    }

    #[test]
    fn filter_matches_bruteforce_grid() {
        // Grid over (ex, v, a) with step 0.05.
        for class in 0..7i64 {
            let mut v = -1.0f64;
            while v <= 1.0 {
                let mut a = -1.0f64;
                while a <= 1.0 {
                    let r = record("v", 0, Some((v, a)), Some(class));
                    let (out, rule) = filter_record(&r);
                    assert_eq!(
                        out.excluded,
                        filter_oracle(&r),
                        "class={class} v={v} a={a} rule={rule:?}"
                    );
                    a += 0.05;
                }
                v += 0.05;
            }
        }
    }

    #[test]
    fn policy_none_is_identity() {
        let index = index_of(vec![record("v", 0, None, Some(4))]);
        let hist = build_va_histograms(&index, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = apply_pseudo_policy(&index, &hist, PseudoPolicy::None, &mut rng).unwrap();
        assert_eq!(out, index);
    }

    #[test]
    fn valence_only_policy_leaves_arousal_absent() {
        let index = index_of(vec![
            record("v", 0, Some((0.5, 0.5)), Some(4)),
            record("v", 1, None, Some(4)),
        ]);
        let hist = build_va_histograms(&index, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = apply_pseudo_policy(&index, &hist, PseudoPolicy::ValenceOnly, &mut rng).unwrap();
        let rec = &out.video("v").unwrap()[1];
        assert!(rec.pseudo_valence.is_some());
        assert_eq!(rec.pseudo_arousal, None);
    }

    #[test]
    fn va_ex_policy_fills_soft_labels_for_all_ex_missing_frames() {
        // Corpus where 31% of frames lack EX; all of them gain soft labels.
        let mut records = Vec::new();
        for i in 0..100u32 {
            let ex = if i % 100 < 69 { Some(4) } else { None };
            records.push(record("v", i, Some((0.5, 0.5)), ex));
        }
        let index = index_of(records);
        let hist = build_va_histograms(&index, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = apply_pseudo_policy(&index, &hist, PseudoPolicy::VaEx, &mut rng).unwrap();
        let missing = out.records().filter(|r| r.ex.is_none()).count();
        let soft = out.records().filter(|r| r.soft_ex.is_some()).count();
        assert_eq!(missing, 31);
        assert_eq!(soft, 31);
    }

    #[test]
    fn excluded_frames_never_receive_pseudo_labels() {
        let contradictory = record("v", 1, Some((-0.4, 0.0)), Some(4));
        let (contradictory, _) = filter_record(&contradictory);
        let mut no_va = record("v", 2, None, Some(4));
        no_va.excluded = true;
        let index = index_of(vec![record("v", 0, Some((0.5, 0.5)), Some(4)), contradictory, no_va]);
        let hist = build_va_histograms(&index, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = apply_pseudo_policy(&index, &hist, PseudoPolicy::Va, &mut rng).unwrap();
        let rec = &out.video("v").unwrap()[2];
        assert_eq!(rec.pseudo_valence, None);
    }

    fn arbitrary_histogram() -> impl Strategy<Value = VaHistogramSet> {
        (2usize..8, proptest::collection::vec((0u64..5, 0usize..7), 1..60)).prop_map(
            |(bins, samples)| {
                let mut hist = VaHistogramSet::new(bins).unwrap();
                for (weight, class) in samples {
                    let ex = ExpressionLabel::new(class as i64).unwrap();
                    for k in 0..weight {
                        let v = -1.0 + 2.0 * ((k as f64 * 0.37 + class as f64 * 0.13) % 1.0);
                        let a = -1.0 + 2.0 * ((k as f64 * 0.71 + class as f64 * 0.29) % 1.0);
                        hist.add(ex, ValenceArousal::new(v, a));
                    }
                }
                hist
            },
        )
    }

    proptest! {
        #[test]
        fn soft_labels_sum_to_one_on_every_nonempty_bin(hist in arbitrary_histogram()) {
            let bins = hist.bins_per_axis();
            for vb in 0..bins {
                for ab in 0..bins {
                    let (v_lo, v_hi) = hist.bin_range(vb);
                    let (a_lo, a_hi) = hist.bin_range(ab);
                    let va = ValenceArousal::new((v_lo + v_hi) / 2.0, (a_lo + a_hi) / 2.0);
                    let nonempty = hist.counts_at(va).iter().sum::<u64>() > 0;
                    match soft_expression(&hist, va) {
                        Ok(soft) => {
                            prop_assert!(nonempty);
                            let sum: f64 = soft.probs().iter().sum();
                            prop_assert!((sum - 1.0).abs() <= 1e-9);
                        }
                        Err(Error::EmptyDistribution(_)) => prop_assert!(!nonempty),
                        Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
                    }
                }
            }
        }

        #[test]
        fn sampled_pseudo_labels_stay_in_range(
            hist in arbitrary_histogram(),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for ex in ExpressionLabel::all() {
                if hist.totals()[ex.class_index()] == 0 {
                    continue;
                }
                let va = sample_pseudo_va(&hist, ex, &mut rng).unwrap();
                prop_assert!(va.is_valid());
            }
        }

        #[test]
        fn pseudo_policy_never_overwrites_labels(seed in 0u64..500) {
            // frames 0 and 1 share a histogram bin (bins=5 puts both VA
            // pairs in bin (3, 3)) so the soft label for frame 1 is defined
            let index = index_of(vec![
                record("v", 0, Some((0.25, 0.25)), Some(4)),
                record("v", 1, Some((0.3, 0.2)), None),
                record("v", 2, None, Some(4)),
            ]);
            let hist = build_va_histograms(&index, 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = apply_pseudo_policy(&index, &hist, PseudoPolicy::VaEx, &mut rng).unwrap();
            for (before, after) in index.records().zip(out.records()) {
                prop_assert_eq!(before.va, after.va);
                prop_assert_eq!(before.ex, after.ex);
                // pseudo slots only fill where the real label is absent
                if before.va.is_some() {
                    prop_assert_eq!(after.pseudo_valence, None);
                }
                if before.ex.is_some() {
                    prop_assert!(after.soft_ex.is_none());
                }
            }
        }

        #[test]
        fn histogram_merge_is_associative(
            a in arbitrary_histogram(),
        ) {
            // split-merge equals whole-build: merging per-video partials is
            // order independent because addition commutes.
            let mut empty = VaHistogramSet::new(a.bins_per_axis()).unwrap();
            empty.merge(&a).unwrap();
            prop_assert_eq!(&empty, &a);
        }
    }
}
