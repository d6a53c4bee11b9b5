//! Confusion matrices, macro-averaged metrics and fixed-point report tables.
//!
//! Per-class precision and recall are 0 when their denominator is 0, and F1
//! is 0 when precision and recall are both 0. Classes that never occur in
//! the truth are left out of the macro averages.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt_forge::PromptVariant;
use crate::taxonomy::{Stage, StageLabel};
use crate::verdict_parser::Verdict;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{truths} truths but {preds} predictions")]
    LengthMismatch { truths: usize, preds: usize },
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no truth for segment {0}")]
    MissingTruth(String),
}

/// Rows are truth, columns are prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub label_set: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(label_set: &[&str]) -> Self {
        let n = label_set.len();
        Self {
            label_set: label_set.iter().map(|s| s.to_string()).collect(),
            counts: vec![vec![0; n]; n],
        }
    }

    fn index(&self, label: &str) -> Result<usize, EvalError> {
        self.label_set
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| EvalError::UnknownLabel(label.to_string()))
    }

    pub fn add(&mut self, truth: &str, pred: &str) -> Result<(), EvalError> {
        let (t, p) = (self.index(truth)?, self.index(pred)?);
        self.counts[t][p] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.label_set.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn get(&self, truth: &str, pred: &str) -> Option<u64> {
        Some(self.counts[self.index(truth).ok()?][self.index(pred).ok()?])
    }
}

pub fn confusion<T: AsRef<str>, P: AsRef<str>>(
    truths: &[T],
    preds: &[P],
    label_set: &[&str],
) -> Result<ConfusionMatrix, EvalError> {
    if truths.len() != preds.len() || truths.is_empty() {
        return Err(EvalError::LengthMismatch {
            truths: truths.len(),
            preds: preds.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(label_set);
    for (t, p) in truths.iter().zip(preds) {
        cm.add(t.as_ref(), p.as_ref())?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let n = cm.label_set.len();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|i| {
            let tp = cm.counts[i][i];
            let support: u64 = cm.counts[i].iter().sum();
            let predicted: u64 = (0..n).map(|r| cm.counts[r][i]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: cm.label_set[i].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let scored: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| scored.iter().map(|c| f(c)).sum::<f64>() / scored.len() as f64;
    Ok(Metrics {
        accuracy: ratio(cm.trace(), total),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub stage: Stage,
    pub variant: PromptVariant,
    pub backend: String,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    /// Segments left out because the verdict carried no label.
    #[serde(default)]
    pub unscored: usize,
}

impl EvalReport {
    pub fn from_confusion(
        stage: Stage,
        variant: PromptVariant,
        backend: impl Into<String>,
        cm: ConfusionMatrix,
    ) -> Result<Self, EvalError> {
        let m = macro_metrics(&cm)?;
        Ok(Self {
            stage,
            variant,
            backend: backend.into(),
            accuracy: m.accuracy,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            macro_f1: m.macro_f1,
            per_class: m.per_class,
            confusion: Some(cm),
            unscored: 0,
        })
    }

    /// A report carrying only headline numbers, e.g. published reference values.
    pub fn from_values(
        stage: Stage,
        variant: PromptVariant,
        backend: impl Into<String>,
        [accuracy, macro_precision, macro_recall, macro_f1]: [f64; 4],
    ) -> Self {
        Self {
            stage,
            variant,
            backend: backend.into(),
            accuracy,
            macro_precision,
            macro_recall,
            macro_f1,
            per_class: Vec::new(),
            confusion: None,
            unscored: 0,
        }
    }

    pub fn row(&self) -> String {
        format!(
            "{:.4} {:.4} {:.4} {:.4}",
            self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        )
    }
}

/// Score verdicts of one stage against per-segment ground truth.
pub fn score_verdicts(
    stage: Stage,
    variant: PromptVariant,
    backend: &str,
    verdicts: &[Verdict],
    truth: &HashMap<String, StageLabel>,
) -> Result<EvalReport, EvalError> {
    let labels = stage.wire_labels();
    let mut cm = ConfusionMatrix::new(&labels);
    let mut unscored = 0;
    for v in verdicts.iter().filter(|v| v.stage == stage) {
        let t = truth
            .get(&v.segment_id)
            .ok_or_else(|| EvalError::MissingTruth(v.segment_id.clone()))?;
        match v.label {
            Some(p) => cm.add(t.as_str(), p.as_str())?,
            None => unscored += 1,
        }
    }
    let mut report = EvalReport::from_confusion(stage, variant, backend, cm)?;
    report.unscored = unscored;
    Ok(report)
}

fn stage_title(stage: Stage) -> &'static str {
    match stage {
        Stage::Stage1 => "Binary classification (Stage 1)",
        Stage::Stage2 => "Multi-class classification (Stage 2)",
    }
}

fn variant_cell(v: PromptVariant) -> String {
    match v {
        PromptVariant::Baseline => v.display_name().to_string(),
        _ => format!("  {}", v.display_name()),
    }
}

const SETTING_WIDTH: usize = 28;
const HEADER: &str = "Accuracy Precision Recall F1-Score";

/// Plain-text tables grouped by stage, then backend, then prompt variant.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<SETTING_WIDTH$}{HEADER}", "Model / Setting");
    for stage in [Stage::Stage1, Stage::Stage2] {
        let in_stage: Vec<&EvalReport> = reports.iter().filter(|r| r.stage == stage).collect();
        if in_stage.is_empty() {
            continue;
        }
        let _ = writeln!(out, "== {} ==", stage_title(stage));
        let mut backends: Vec<&str> = Vec::new();
        for r in &in_stage {
            if !backends.contains(&r.backend.as_str()) {
                backends.push(&r.backend);
            }
        }
        for backend in backends {
            let _ = writeln!(out, "{backend}");
            let mut rows: Vec<&&EvalReport> = in_stage.iter().filter(|r| r.backend == backend).collect();
            rows.sort_by_key(|r| r.variant);
            for r in rows {
                let _ = writeln!(out, "{:<SETTING_WIDTH$}{}", variant_cell(r.variant), r.row());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const AB: [&str; 2] = ["A", "B"];

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-4
    }

    #[test]
    fn tally_example() {
        let cm = confusion(&["A", "A", "B", "B"], &["A", "B", "B", "B"], &AB).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        let same = confusion(&["A", "B", "B"], &["A", "B", "B"], &AB).unwrap();
        assert_eq!(same.counts, vec![vec![1, 0], vec![0, 2]]);
    }

    #[test]
    fn input_errors() {
        let empty: [&str; 0] = [];
        assert!(matches!(confusion(&empty, &empty, &AB), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(confusion(&["A"], &["A", "B"], &AB), Err(EvalError::LengthMismatch { .. })));
        assert_eq!(confusion(&["A"], &["C"], &AB), Err(EvalError::UnknownLabel("C".into())));
        assert_eq!(macro_metrics(&ConfusionMatrix::new(&AB)), Err(EvalError::EmptyMatrix));
    }

    #[test]
    fn hand_computed_example() {
        let cm = confusion(&["A", "A", "B", "B"], &["A", "B", "B", "B"], &AB).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!(close(m.macro_precision, 0.8333));
        assert_eq!(m.macro_recall, 0.75);
        assert!(close(m.macro_f1, 0.7333));
        let r = EvalReport::from_confusion(Stage::Stage1, PromptVariant::Baseline, "x", cm).unwrap();
        assert_eq!(r.row(), "0.7500 0.8333 0.7500 0.7333");
    }

    #[test]
    fn degenerate_predictions() {
        let cm = confusion(&["A", "A", "B", "B"], &["A"; 4], &AB).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!(close(m.macro_f1, 0.3333));

        let labels = ["A", "B", "C", "D"];
        let cm = confusion(&labels, &labels, &labels).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert_eq!([m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1], [1.0; 4]);
    }

    #[test]
    fn zero_support_classes_are_excluded() {
        // C never occurs in the truth and is never predicted
        let cm = confusion(&["A", "B"], &["A", "B"], &["A", "B", "C"]).unwrap();
        assert_eq!(macro_metrics(&cm).unwrap().macro_f1, 1.0);
    }

    #[test]
    fn table_layout() {
        let empty = render_table(&[]);
        assert_eq!(empty.lines().count(), 1);
        assert!(empty.contains("F1-Score"));

        let reports = vec![
            EvalReport::from_values(Stage::Stage2, PromptVariant::FewShot, "ft", [0.6885, 0.6035, 0.5716, 0.5678]),
            EvalReport::from_values(Stage::Stage1, PromptVariant::CoT, "ft", [0.8809, 0.8407, 0.8260, 0.8329]),
            EvalReport::from_values(Stage::Stage1, PromptVariant::Baseline, "ft", [0.8345, 0.7750, 0.8219, 0.7919]),
        ];
        let text = render_table(&reports);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].contains("Stage 1"));
        assert!(lines[3].starts_with("Baseline Prompt") && lines[3].ends_with("0.8345 0.7750 0.8219 0.7919"));
        assert!(lines[4].starts_with("  + CoT") && lines[4].ends_with("0.8809 0.8407 0.8260 0.8329"));
        assert!(lines[5].contains("Stage 2"));
        assert!(lines[7].ends_with("0.6885 0.6035 0.5716 0.5678"));
    }

    /// Independent pair-counting reference.
    fn brute_force(truths: &[usize], preds: &[usize], k: usize) -> (f64, f64, f64, f64) {
        let n = truths.len() as f64;
        let pairs: Vec<(usize, usize)> = truths.iter().copied().zip(preds.iter().copied()).collect();
        let acc = pairs.iter().filter(|(t, p)| t == p).count() as f64 / n;
        let (mut ps, mut rs, mut fs, mut m) = (0.0, 0.0, 0.0, 0.0);
        for c in 0..k {
            let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
            let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
            let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
            if tp + fn_ == 0.0 {
                continue;
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = tp / (tp + fn_);
            let f = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
            ps += p;
            rs += r;
            fs += f;
            m += 1.0;
        }
        (acc, ps / m, rs / m, fs / m)
    }

    fn lists() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        prop_oneof![Just(2usize), Just(4usize)]
            .prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 1..60)))
    }

    const NAMES: [&str; 4] = ["w", "x", "y", "z"];

    proptest! {
        #[test]
        fn matches_brute_force((k, pairs) in lists()) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let names = |v: &[usize]| v.iter().map(|&i| NAMES[i]).collect::<Vec<_>>();
            let cm = confusion(&names(&t), &names(&p), &NAMES[..k]).unwrap();
            let m = macro_metrics(&cm).unwrap();
            let (a, pr, r, f) = brute_force(&t, &p, k);
            prop_assert!((m.accuracy - a).abs() < 1e-9);
            prop_assert!((m.macro_precision - pr).abs() < 1e-9);
            prop_assert!((m.macro_recall - r).abs() < 1e-9);
            prop_assert!((m.macro_f1 - f).abs() < 1e-9);
            prop_assert_eq!(cm.total(), t.len() as u64);
        }

        #[test]
        fn label_order_does_not_matter((k, pairs) in lists(), rot in 0usize..4) {
            let (t, p): (Vec<&str>, Vec<&str>) = pairs.iter().map(|&(a, b)| (NAMES[a], NAMES[b])).unzip();
            let mut order: Vec<&str> = NAMES[..k].to_vec();
            order.rotate_left(rot % k);
            order.reverse();
            let a = macro_metrics(&confusion(&t, &p, &NAMES[..k]).unwrap()).unwrap();
            let b = macro_metrics(&confusion(&t, &p, &order).unwrap()).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
            prop_assert!((a.macro_recall - b.macro_recall).abs() < 1e-12);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            for v in [a.accuracy, a.macro_precision, a.macro_recall, a.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
