//! Per-class binary metrics: confusion counts, sensitivity, specificity,
//! ROC curves and operating points.
//!
//! A sample is predicted positive iff its score is `>=` the threshold.

pub mod report;

use crate::error::{Error, Result};

pub use report::{
    read_predictions, write_predictions, ClassReport, ComparisonRow, Predictions,
    CHESTXRAY14_CLASSES,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Argument("no samples to evaluate".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Argument(format!("score {s} is not a number")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Argument(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

pub fn confusion_counts(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs(scores, labels)?;
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Argument(format!("score {s} is outside [0, 1]")));
    }
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `TP / (TP + FN)`.
pub fn sensitivity(c: &ConfusionCounts) -> Result<f64> {
    if c.positives() == 0 {
        return Err(Error::UndefinedMetric("sensitivity with no positive samples".into()));
    }
    Ok(c.tp as f64 / c.positives() as f64)
}

/// `TN / (FP + TN)`.
pub fn specificity(c: &ConfusionCounts) -> Result<f64> {
    if c.negatives() == 0 {
        return Err(Error::UndefinedMetric("specificity with no negative samples".into()));
    }
    Ok(c.tn as f64 / c.negatives() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ordered by decreasing threshold, from `+∞` (nothing positive) to
    /// `−∞` (everything positive).
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Sweeps the threshold over every distinct score plus `±∞`; the area is
/// the trapezoidal rule on integer counts.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC needs both classes, got {positives} positive and {negatives} negative samples"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let point = |threshold: f64, tp: usize, fp: usize| RocPoint {
        threshold,
        fpr: fp as f64 / negatives as f64,
        tpr: tp as f64 / positives as f64,
        tp,
        fp,
    };
    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the area in units of one positive × one negative.
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as u128;
        points.push(point(s, tp, fp));
    }
    points.push(point(f64::NEG_INFINITY, tp, fp));
    let auc = area2 as f64 / (2.0 * positives as f64 * negatives as f64);
    Ok(RocCurve {
        points,
        auc,
        positives,
        negatives,
    })
}

/// Trapezoidal area under an ROC curve.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.auc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Sensitivity at least this, maximizing specificity.
    Sensitivity(f64),
    /// Specificity at least this, maximizing sensitivity.
    Specificity(f64),
    /// Maximal `sensitivity + specificity − 1`.
    YoudenMax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Picks the ROC point meeting `target` that maximizes the complementary
/// metric; ties go to the lower threshold.
pub fn operating_point(roc: &RocCurve, target: Target) -> Result<OperatingPoint> {
    let candidates = roc.points.iter().map(|p| OperatingPoint {
        threshold: p.threshold,
        sensitivity: p.tpr,
        specificity: (roc.negatives - p.fp) as f64 / roc.negatives as f64,
    });
    let (qualifies, objective): (Box<dyn Fn(&OperatingPoint) -> bool>, fn(&OperatingPoint) -> f64) =
        match target {
            Target::Sensitivity(s) => (Box::new(move |p| p.sensitivity >= s), |p| p.specificity),
            Target::Specificity(s) => (Box::new(move |p| p.specificity >= s), |p| p.sensitivity),
            Target::YoudenMax => (Box::new(|_| true), |p| p.sensitivity + p.specificity - 1.0),
        };
    // Points come in decreasing threshold order, so `>=` keeps the lowest
    // threshold among equals.
    let best = candidates
        .filter(|p| qualifies(p))
        .fold(None::<OperatingPoint>, |best, p| match best {
            Some(b) if objective(&p) < objective(&b) => Some(b),
            _ => Some(p),
        });
    best.ok_or_else(|| {
        let (what, wanted, best) = match target {
            Target::Sensitivity(s) => ("sensitivity", s, roc.points.iter().map(|p| p.tpr).fold(0.0, f64::max)),
            Target::Specificity(s) => ("specificity", s, roc.points.iter().map(|p| (roc.negatives - p.fp) as f64 / roc.negatives as f64).fold(0.0, f64::max)),
            Target::YoudenMax => unreachable!("every point qualifies"),
        };
        Error::Argument(format!(
            "{what} >= {wanted} is unachievable; the best achievable is {best}"
        ))
    })
}
