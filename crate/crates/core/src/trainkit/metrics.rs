use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::emotion_space::BasicEmotion;

pub type Matrix4 = [[usize; 4]; 4];

/// Cell `(r, c)` counts samples of true class `r` predicted as `c`.
pub fn confusion_matrix(preds: &[usize], labels: &[usize]) -> Result<Matrix4, TrainError> {
    if preds.len() != labels.len() {
        return Err(TrainError::Metric(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut m = [[0; 4]; 4];
    for (i, (&p, &l)) in preds.iter().zip(labels).enumerate() {
        if p >= 4 || l >= 4 {
            return Err(TrainError::Metric(format!("sample {i}: class index out of range (pred {p}, label {l})")));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Per-class recall in percent; `None` for classes with no samples.
pub fn per_class_recall(confusion: &Matrix4) -> [Option<f64>; 4] {
    std::array::from_fn(|r| {
        let total: usize = confusion[r].iter().sum();
        (total > 0).then(|| 100.0 * confusion[r][r] as f64 / total as f64)
    })
}

/// Unweighted accuracy in percent: the mean recall over classes present.
/// Absent classes are skipped with a warning.
pub fn unweighted_accuracy(confusion: &Matrix4) -> f64 {
    let recalls = per_class_recall(confusion);
    for (i, r) in recalls.iter().enumerate() {
        if r.is_none() {
            log::warn!(
                "class {} has no samples; excluded from unweighted accuracy",
                BasicEmotion::from_index(i).unwrap().name()
            );
        }
    }
    let present: Vec<f64> = recalls.into_iter().flatten().collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().sum::<f64>() / present.len() as f64
}

/// Nearest multiple of one half.
pub fn half_bin(x: f64) -> f64 {
    (2.0 * x).round() / 2.0
}

/// Percentage of samples whose prediction and label fall in the same
/// half-point bin.
pub fn binned_accuracy(preds: &[f64], labels: &[f64]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| half_bin(**p) == half_bin(**l)).count();
    100.0 * hits as f64 / preds.len() as f64
}

pub fn mse(preds: &[f64], labels: &[f64]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).map(|(p, l)| (p - l).powi(2)).sum::<f64>() / preds.len() as f64
}

/// Prediction for one test composition's target segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub target_id: String,
    pub label: BasicEmotion,
    pub predicted: BasicEmotion,
    pub probs: [f64; 4],
    pub valence: f64,
    pub arousal: f64,
    pub valence_label: f64,
    pub arousal_label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Unweighted accuracy, percent.
    pub ua: f64,
    /// Fraction of correct predictions, percent.
    pub wa: f64,
    pub per_class_recall: [Option<f64>; 4],
    /// Rows are true classes, columns predictions, in class-index order.
    pub confusion: Matrix4,
    /// Half-point binned accuracy, percent.
    pub valence_acc: f64,
    pub arousal_acc: f64,
    pub valence_mse: f64,
    pub arousal_mse: f64,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>) -> Self {
        let preds: Vec<usize> = records.iter().map(|r| r.predicted.index()).collect();
        let labels: Vec<usize> = records.iter().map(|r| r.label.index()).collect();
        let confusion = confusion_matrix(&preds, &labels).expect("basic emotions index below 4");
        let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        let col = |f: fn(&EvalRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        let (v, vl, a, al) = (col(|r| r.valence), col(|r| r.valence_label), col(|r| r.arousal), col(|r| r.arousal_label));
        Self {
            ua: unweighted_accuracy(&confusion),
            wa: if records.is_empty() { 0.0 } else { 100.0 * correct as f64 / records.len() as f64 },
            per_class_recall: per_class_recall(&confusion),
            confusion,
            valence_acc: binned_accuracy(&v, &vl),
            arousal_acc: binned_accuracy(&a, &al),
            valence_mse: mse(&v, &vl),
            arousal_mse: mse(&a, &al),
            records,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        serde_json::from_str(text).map_err(|e| TrainError::Metric(format!("eval report: {e}")))
    }
}

/// Cell `(r, c)` with `c ≠ r` counts samples of true class `r` that A gets
/// right and B predicts as `c`; the diagonal `(r, r)` holds the row's total
/// of such A-right/B-wrong samples.
pub fn disagreement_matrix(a: &EvalReport, b: &EvalReport) -> Result<Matrix4, TrainError> {
    if a.records.len() != b.records.len()
        || a.records.iter().zip(&b.records).any(|(x, y)| x.target_id != y.target_id || x.label != y.label)
    {
        return Err(TrainError::Metric("reports cover different test samples".into()));
    }
    let mut m = [[0; 4]; 4];
    for (x, y) in a.records.iter().zip(&b.records) {
        let r = x.label.index();
        if x.predicted == x.label && y.predicted != y.label {
            m[r][y.predicted.index()] += 1;
            m[r][r] += 1;
        }
    }
    Ok(m)
}

/// Matrix as CSV with emotion names on both axes.
pub fn matrix_csv(m: &Matrix4) -> String {
    let names = BasicEmotion::ALL.map(BasicEmotion::name);
    let mut s = format!("true\\pred,{}\n", names.join(","));
    for (name, row) in names.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        s.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    s
}
