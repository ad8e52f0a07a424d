//! Losses with analytic gradients, masked multi-task normalization, and the
//! competition evaluation criteria.
//!
//! Each task loss is divided by the number of labeled samples for that task
//! in the batch; absent labels contribute nothing. The VA loss is the mean
//! of the valence and arousal concordance-loss terms, each computed over the
//! labeled subset of the batch only (a sample with a pseudo valence but no
//! arousal enters the valence series alone).

use crate::annotations::{ActionUnits, ExpressionLabel, FrameRecord, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::labelfusion::SoftExpression;

/// Per-sample model outputs for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPredictions {
    /// [valence, arousal] per sample.
    pub va: Vec<[f64; 2]>,
    /// Expression logits per sample.
    pub ex: Vec<[f64; NUM_EXPRESSIONS]>,
    /// Action-unit logits per sample; rows share one length K.
    pub au: Vec<Vec<f64>>,
}

impl BatchPredictions {
    pub fn len(&self) -> usize {
        self.va.len()
    }

    pub fn is_empty(&self) -> bool {
        self.va.is_empty()
    }

    /// Split flat [v, a, ex..., au...] prediction rows.
    pub fn from_rows(rows: &[Vec<f64>], au_count: usize) -> Result<BatchPredictions> {
        let width = 2 + NUM_EXPRESSIONS + au_count;
        let mut out = BatchPredictions {
            va: Vec::with_capacity(rows.len()),
            ex: Vec::with_capacity(rows.len()),
            au: Vec::with_capacity(rows.len()),
        };
        for row in rows {
            if row.len() != width {
                return Err(Error::Shape(format!(
                    "prediction row has {} entries, expected {width}",
                    row.len()
                )));
            }
            out.va.push([row[0], row[1]]);
            let mut ex = [0.0; NUM_EXPRESSIONS];
            ex.copy_from_slice(&row[2..2 + NUM_EXPRESSIONS]);
            out.ex.push(ex);
            out.au.push(row[2 + NUM_EXPRESSIONS..].to_vec());
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.ex.len() != self.va.len() || self.au.len() != self.va.len() {
            return Err(Error::Shape(format!(
                "prediction blocks disagree: va {}, ex {}, au {}",
                self.va.len(),
                self.ex.len(),
                self.au.len()
            )));
        }
        if let Some(first) = self.au.first() {
            if self.au.iter().any(|row| row.len() != first.len()) {
                return Err(Error::Shape("ragged AU logit rows".into()));
            }
        }
        Ok(())
    }
}

/// Expression target: a hard class or a soft probability vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ExTarget {
    Hard(ExpressionLabel),
    Soft(SoftExpression),
}

impl ExTarget {
    fn probs(&self) -> [f64; NUM_EXPRESSIONS] {
        match self {
            ExTarget::Hard(ex) => {
                let mut p = [0.0; NUM_EXPRESSIONS];
                p[ex.class_index()] = 1.0;
                p
            }
            ExTarget::Soft(soft) => *soft.probs(),
        }
    }
}

/// Per-sample training targets; every slot is optional per task, and the
/// valence/arousal components are independently optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchTargets {
    pub valence: Vec<Option<f64>>,
    pub arousal: Vec<Option<f64>>,
    pub ex: Vec<Option<ExTarget>>,
    pub au: Vec<Option<ActionUnits>>,
}

impl BatchTargets {
    pub fn len(&self) -> usize {
        self.valence.len()
    }

    fn validate(&self, preds: &BatchPredictions) -> Result<()> {
        let n = preds.len();
        if self.valence.len() != n
            || self.arousal.len() != n
            || self.ex.len() != n
            || self.au.len() != n
        {
            return Err(Error::Shape(format!(
                "targets sized {}/{}/{}/{} for a batch of {n}",
                self.valence.len(),
                self.arousal.len(),
                self.ex.len(),
                self.au.len()
            )));
        }
        Ok(())
    }
}

/// Assemble batch targets from validated records. Pseudo labels fill the
/// missing VA components; a present soft label replaces the hard EX target.
pub fn targets_from_records<'a>(records: impl Iterator<Item = &'a FrameRecord>) -> BatchTargets {
    let mut out = BatchTargets::default();
    for r in records {
        out.valence.push(r.va.map(|va| va.valence).or(r.pseudo_valence));
        out.arousal.push(r.va.map(|va| va.arousal).or(r.pseudo_arousal));
        out.ex.push(match (&r.soft_ex, r.ex) {
            (Some(soft), _) => Some(ExTarget::Soft(soft.clone())),
            (None, Some(ex)) => Some(ExTarget::Hard(ex)),
            (None, None) => None,
        });
        out.au.push(r.au.clone());
    }
    out
}

/// Loss terms and the labeled counts that normalized them.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub l_ex: f64,
    pub l_au: f64,
    pub l_va: f64,
    pub n_ex: usize,
    pub n_au: usize,
    pub n_v: usize,
    pub n_a: usize,
    pub total: f64,
}

/// Gradients of the total loss with respect to every prediction entry,
/// mirroring the [`BatchPredictions`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGradients {
    pub va: Vec<[f64; 2]>,
    pub ex: Vec<[f64; NUM_EXPRESSIONS]>,
    pub au: Vec<Vec<f64>>,
}

/// Normalization override for gradient accumulation: when a large batch is
/// split into parts, each part is normalized by the full-batch counts so the
/// per-part cross-entropy and BCE contributions sum to the full-batch loss.
/// The concordance terms are not decomposable and always use the series the
/// call sees.
#[derive(Debug, Clone, Copy)]
pub struct CountOverride {
    pub n_ex: usize,
    pub n_au: usize,
}

/// Concordance correlation coefficient with population (1/N) moments:
/// 2 cov / (var_x + var_y + (mean_x - mean_y)²). A vanishing denominator
/// (constant, equal series) yields 0.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Shape(format!(
            "ccc needs at least 2 samples, got {}",
            x.len()
        )));
    }
    let (c, d) = ccc_moments(x, y);
    if d < 1e-12 {
        return Ok(0.0);
    }
    Ok(2.0 * c / d)
}

/// (covariance, denominator) of the CCC.
fn ccc_moments(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut vx = 0.0;
    let mut vy = 0.0;
    let mut cov = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        vx += (xi - mx) * (xi - mx);
        vy += (yi - my) * (yi - my);
        cov += (xi - mx) * (yi - my);
    }
    vx /= n;
    vy /= n;
    cov /= n;
    (cov, vx + vy + (mx - my) * (mx - my))
}

/// d ccc / d x_i for every i; zero when the denominator is degenerate.
fn ccc_gradient(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (c, d) = ccc_moments(x, y);
    if d < 1e-12 {
        return vec![0.0; x.len()];
    }
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            2.0 / (n * d * d) * ((yi - my) * d - 2.0 * c * ((xi - mx) + (mx - my)))
        })
        .collect()
}

fn softmax(logits: &[f64; NUM_EXPRESSIONS]) -> [f64; NUM_EXPRESSIONS] {
    let max = logits.iter().cloned().fold(f64::MIN, f64::max);
    let mut out = [0.0; NUM_EXPRESSIONS];
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Cross-entropy of a (soft) target against logits: -Σ p log softmax(z).
fn cross_entropy(logits: &[f64; NUM_EXPRESSIONS], probs: &[f64; NUM_EXPRESSIONS]) -> f64 {
    let max = logits.iter().cloned().fold(f64::MIN, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    probs
        .iter()
        .zip(logits)
        .map(|(&p, &z)| p * (log_sum - z))
        .sum()
}

/// Numerically stable binary cross-entropy of a logit against a 0/1 target.
fn bce_with_logit(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Masked multi-task loss and its analytic gradients.
///
/// l_ex: summed (soft) cross-entropy over EX-labeled samples / n_ex.
/// l_au: summed per-unit BCE over AU-labeled samples / n_au.
/// l_va: mean of the valence and arousal terms (1 - ccc), each over its
/// labeled subset and dropped (0) when fewer than 2 samples carry it.
pub fn multitask_loss(
    preds: &BatchPredictions,
    targets: &BatchTargets,
) -> Result<(LossBreakdown, PredictionGradients)> {
    multitask_loss_normalized(preds, targets, None)
}

/// [`multitask_loss`] with an optional count override for accumulation.
pub fn multitask_loss_normalized(
    preds: &BatchPredictions,
    targets: &BatchTargets,
    counts: Option<CountOverride>,
) -> Result<(LossBreakdown, PredictionGradients)> {
    preds.validate()?;
    targets.validate(preds)?;
    if preds.is_empty() {
        return Err(Error::Shape("batch must be nonempty".into()));
    }

    let n = preds.len();
    let mut grads = PredictionGradients {
        va: vec![[0.0; 2]; n],
        ex: vec![[0.0; NUM_EXPRESSIONS]; n],
        au: preds.au.iter().map(|row| vec![0.0; row.len()]).collect(),
    };

    // expression: summed cross-entropy / n_ex
    let labeled_ex = targets.ex.iter().filter(|t| t.is_some()).count();
    let norm_ex = counts.map_or(labeled_ex, |c| c.n_ex);
    let mut l_ex = 0.0;
    if norm_ex > 0 {
        for (i, target) in targets.ex.iter().enumerate() {
            let Some(target) = target else { continue };
            let probs = target.probs();
            l_ex += cross_entropy(&preds.ex[i], &probs);
            let soft = softmax(&preds.ex[i]);
            for k in 0..NUM_EXPRESSIONS {
                grads.ex[i][k] = (soft[k] - probs[k]) / norm_ex as f64;
            }
        }
        l_ex /= norm_ex as f64;
    }

    // action units: summed per-sample-per-unit BCE / n_au
    let labeled_au = targets.au.iter().filter(|t| t.is_some()).count();
    let norm_au = counts.map_or(labeled_au, |c| c.n_au);
    let mut l_au = 0.0;
    if norm_au > 0 {
        for (i, target) in targets.au.iter().enumerate() {
            let Some(target) = target else { continue };
            if target.len() != preds.au[i].len() {
                return Err(Error::Shape(format!(
                    "sample {i}: {} AU logits vs {} targets",
                    preds.au[i].len(),
                    target.len()
                )));
            }
            for (k, &z) in preds.au[i].iter().enumerate() {
                let t = target.activations()[k] as f64;
                l_au += bce_with_logit(z, t);
                grads.au[i][k] = (sigmoid(z) - t) / norm_au as f64;
            }
        }
        l_au /= norm_au as f64;
    }

    // valence/arousal: 1 - ccc per component over its labeled subset
    let mut l_va = 0.0;
    let mut n_component = [0usize; 2];
    for (component, series_targets) in [(0usize, &targets.valence), (1usize, &targets.arousal)] {
        let mut idx = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, t) in series_targets.iter().enumerate() {
            if let Some(t) = t {
                idx.push(i);
                x.push(preds.va[i][component]);
                y.push(*t);
            }
        }
        n_component[component] = x.len();
        if x.len() < 2 {
            continue; // dropped term contributes exactly 0
        }
        let value = ccc(&x, &y)?;
        l_va += 0.5 * (1.0 - value);
        let dccc = ccc_gradient(&x, &y);
        for (pos, &i) in idx.iter().enumerate() {
            grads.va[i][component] = -0.5 * dccc[pos];
        }
    }

    let breakdown = LossBreakdown {
        l_ex,
        l_au,
        l_va,
        n_ex: labeled_ex,
        n_au: labeled_au,
        n_v: n_component[0],
        n_a: n_component[1],
        total: l_ex + l_au + l_va,
    };
    Ok((breakdown, grads))
}

/// Confusion counts over `classes` classes; rows are the actual class,
/// columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<usize>) -> Result<ConfusionMatrix> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!(
                "{} counts for a {classes}x{classes} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn add(&mut self, actual: usize, predicted: usize) {
        self.counts[actual * self.classes + predicted] += 1;
    }

    pub fn count(&self, actual: usize, predicted: usize) -> usize {
        self.counts[actual * self.classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: usize = (0..self.classes).map(|c| self.count(c, c)).sum();
        correct as f64 / total as f64
    }
}

/// Per-class and macro (unweighted mean) F1. A class with an undefined
/// precision, recall or F1 scores 0 by convention.
pub fn f1_scores(confusion: &ConfusionMatrix) -> (Vec<f64>, f64) {
    let classes = confusion.classes;
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion.count(c, c);
        let fp: usize = (0..classes).filter(|&a| a != c).map(|a| confusion.count(a, c)).sum();
        let fn_: usize = (0..classes).filter(|&p| p != c).map(|p| confusion.count(c, p)).sum();
        per_class.push(binary_f1(tp, fp, fn_));
    }
    let macro_f1 = per_class.iter().sum::<f64>() / classes as f64;
    (per_class, macro_f1)
}

/// F1 = 2 p r / (p + r), 0 when undefined.
pub fn binary_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Expression challenge score: 0.67 F1 + 0.33 accuracy.
pub fn expression_criterion(macro_f1: f64, accuracy: f64) -> f64 {
    0.67 * macro_f1 + 0.33 * accuracy
}

/// Action-unit challenge score: 0.5 average F1 + 0.5 accuracy.
pub fn au_criterion(avg_f1: f64, total_accuracy: f64) -> f64 {
    0.5 * avg_f1 + 0.5 * total_accuracy
}

/// Valence-arousal challenge score: mean CCC.
pub fn va_score(ccc_v: f64, ccc_a: f64) -> f64 {
    (ccc_v + ccc_a) / 2.0
}

/// Full evaluation summary; every field is present even with zero counts.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub ccc_v: f64,
    pub ccc_a: f64,
    pub ccc_mean: f64,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub ex_accuracy: f64,
    pub ex_criterion: f64,
    pub au_per_unit_f1: Vec<f64>,
    pub au_avg_f1: f64,
    pub au_accuracy: f64,
    pub au_criterion: f64,
    pub n_va: usize,
    pub n_ex: usize,
    pub n_au: usize,
}

/// Score predictions against targets: concatenated-series CCC for each VA
/// component, macro F1 + accuracy for expressions (argmax over logits), and
/// per-unit binary F1 + overall accuracy for action units (logit > 0).
pub fn evaluate_predictions(preds: &BatchPredictions, targets: &BatchTargets) -> Result<EvalReport> {
    preds.validate()?;
    targets.validate(preds)?;
    let mut report = EvalReport {
        per_class_f1: vec![0.0; NUM_EXPRESSIONS],
        ..EvalReport::default()
    };

    for (component, series_targets, out) in [
        (0usize, &targets.valence, &mut report.ccc_v),
        (1usize, &targets.arousal, &mut report.ccc_a),
    ] {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, t) in series_targets.iter().enumerate() {
            if let Some(t) = t {
                x.push(preds.va[i][component]);
                y.push(*t);
            }
        }
        if component == 0 {
            report.n_va = x.len();
        }
        *out = if x.len() >= 2 { ccc(&x, &y)? } else { 0.0 };
    }
    report.ccc_mean = va_score(report.ccc_v, report.ccc_a);

    let mut confusion = ConfusionMatrix::new(NUM_EXPRESSIONS);
    for (i, target) in targets.ex.iter().enumerate() {
        let actual = match target {
            Some(ExTarget::Hard(ex)) => ex.class_index(),
            _ => continue, // soft labels are training targets, not eval truth
        };
        let predicted = argmax(&preds.ex[i]);
        confusion.add(actual, predicted);
        report.n_ex += 1;
    }
    let (per_class, macro_f1) = f1_scores(&confusion);
    report.per_class_f1 = per_class;
    report.macro_f1 = macro_f1;
    report.ex_accuracy = confusion.accuracy();
    report.ex_criterion = expression_criterion(report.macro_f1, report.ex_accuracy);

    let au_count = preds.au.first().map_or(0, Vec::len);
    let mut tp = vec![0usize; au_count];
    let mut fp = vec![0usize; au_count];
    let mut fn_ = vec![0usize; au_count];
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, target) in targets.au.iter().enumerate() {
        let Some(target) = target else { continue };
        report.n_au += 1;
        for (k, &z) in preds.au[i].iter().enumerate() {
            let predicted = z > 0.0;
            let actual = target.is_active(k);
            total += 1;
            correct += (predicted == actual) as usize;
            match (actual, predicted) {
                (true, true) => tp[k] += 1,
                (false, true) => fp[k] += 1,
                (true, false) => fn_[k] += 1,
                (false, false) => {}
            }
        }
    }
    report.au_per_unit_f1 = (0..au_count).map(|k| binary_f1(tp[k], fp[k], fn_[k])).collect();
    report.au_avg_f1 = if au_count > 0 {
        report.au_per_unit_f1.iter().sum::<f64>() / au_count as f64
    } else {
        0.0
    };
    report.au_accuracy = if total > 0 {
        correct as f64 / total as f64
    } else {
        0.0
    };
    report.au_criterion = au_criterion(report.au_avg_f1, report.au_accuracy);

    Ok(report)
}

fn argmax(values: &[f64; NUM_EXPRESSIONS]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
