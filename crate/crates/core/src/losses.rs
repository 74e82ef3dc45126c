//! Training objectives: distance-scaled emotion cross-entropy, valence and
//! arousal MSE, and the adjacent-change cosine loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::emotion_space::{delta_vector, VaPoint};

/// Floor applied to probabilities before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Label changes shorter than this are skipped by the context loss.
pub const DEFAULT_CONTEXT_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected {expected} entries, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0}")]
    Contract(String),
    #[error("loss weights must be non-negative and not all zero: {0:?}")]
    Weights([f64; 4]),
}

/// `(1/N) Σᵢ R[i] · (−Σⱼ y_ij ln max(p_ij, 1e-12))` for `probs` of shape
/// `[N×4]`.
pub fn emotion_loss(g: &mut Graph, probs: Var, onehot: &Tensor, r: &[f64]) -> Result<Var, LossError> {
    let shape = g.value(probs).shape().to_vec();
    if shape.len() != 2 || onehot.shape() != shape.as_slice() {
        return Err(AutodiffError::ShapeMismatch {
            op: "emotion_loss",
            left: shape,
            right: onehot.shape().to_vec(),
        }
        .into());
    }
    let (n, classes) = (shape[0], shape[1]);
    if r.len() != n {
        return Err(LossError::Length {
            what: "R factors",
            expected: n,
            actual: r.len(),
        });
    }
    if g.is_checked() {
        check_emotion_inputs(g.value(probs), onehot, r)?;
    }
    let mut weights = Vec::with_capacity(n * classes);
    for (row, &ri) in onehot.data().chunks(classes).zip(r) {
        weights.extend(row.iter().map(|y| -ri * y / n as f64));
    }
    let w = g.leaf(Tensor::new(shape, weights)?);
    let p = g.clamp_min(probs, PROB_FLOOR)?;
    let lp = g.log(p)?;
    let weighted = g.mul(lp, w)?;
    Ok(g.sum(weighted)?)
}

fn check_emotion_inputs(probs: &Tensor, onehot: &Tensor, r: &[f64]) -> Result<(), LossError> {
    let classes = probs.shape()[1];
    for (i, row) in probs.data().chunks(classes).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(LossError::Contract(format!("probability row {i} is not a distribution (sum {total})")));
        }
    }
    for (i, row) in onehot.data().chunks(classes).enumerate() {
        let ones = row.iter().filter(|&&y| y == 1.0).count();
        let zeros = row.iter().filter(|&&y| y == 0.0).count();
        if ones != 1 || ones + zeros != classes {
            return Err(LossError::Contract(format!("label row {i} is not one-hot")));
        }
    }
    if let Some(i) = r.iter().position(|&x| x <= 0.0 || !x.is_finite()) {
        return Err(LossError::Contract(format!("R[{i}] = {} must be positive", r[i])));
    }
    Ok(())
}

/// `(1/N) Σ (label − pred)²`.
pub fn va_mse(g: &mut Graph, pred: Var, label: &[f64]) -> Result<Var, LossError> {
    let n = g.value(pred).len();
    if label.len() != n {
        return Err(LossError::Length {
            what: "regression labels",
            expected: n,
            actual: label.len(),
        });
    }
    let shape = g.value(pred).shape().to_vec();
    let y = g.leaf(Tensor::new(shape, label.to_vec())?);
    let diff = g.sub(y, pred)?;
    let sq = g.square(diff)?;
    Ok(g.mean(sq)?)
}

/// Per-pair `1 − cos(v_pre, v_label)` terms over adjacent segments.
///
/// `preds[i]` holds segment `i`'s predicted `(valence, arousal)` as a
/// two-element tensor. Pairs whose label change is shorter than `eps` are
/// skipped; norms are clamped below at `eps`.
pub fn context_loss_terms(g: &mut Graph, preds: &[Var], labels: &[VaPoint], eps: f64) -> Result<Vec<Var>, LossError> {
    check_context_inputs(preds.len(), labels.len(), eps)?;
    let mut terms = Vec::new();
    for i in 0..preds.len() - 1 {
        let v_label = delta_vector(labels[i], labels[i + 1]);
        let label_norm = v_label[0].hypot(v_label[1]);
        if label_norm < eps {
            continue;
        }
        let (a, b) = (preds[i], preds[i + 1]);
        if g.value(a).len() != 2 || g.value(b).len() != 2 {
            return Err(LossError::Contract("context predictions must hold (valence, arousal)".into()));
        }
        let a = g.reshape(a, &[2])?;
        let b = g.reshape(b, &[2])?;
        let v_pre = g.sub(b, a)?;
        let lab = g.leaf(Tensor::new(vec![2], v_label.to_vec())?);
        let prod = g.mul(v_pre, lab)?;
        let dot = g.sum(prod)?;
        let sq = g.square(v_pre)?;
        let sq = g.sum(sq)?;
        let sq = g.clamp_min(sq, eps * eps)?;
        let pre_norm = g.sqrt(sq)?;
        let denom = g.scale(pre_norm, label_norm.max(eps))?;
        let cos = g.div(dot, denom)?;
        let neg = g.neg(cos)?;
        terms.push(g.offset(neg, 1.0)?);
    }
    Ok(terms)
}

/// Mean of [`context_loss_terms`], or a constant zero when every pair is
/// skipped.
pub fn context_loss(g: &mut Graph, preds: &[Var], labels: &[VaPoint], eps: f64) -> Result<Var, LossError> {
    let terms = context_loss_terms(g, preds, labels, eps)?;
    mean_of(g, &terms)
}

/// Mean of scalar nodes; a constant zero leaf for an empty list.
pub fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var, LossError> {
    if terms.is_empty() {
        return Ok(g.leaf(Tensor::scalar(0.0)));
    }
    let stacked = g.concat(terms, 0)?;
    Ok(g.mean(stacked)?)
}

/// Context loss on plain points, without recording a graph.
pub fn context_loss_value(preds: &[VaPoint], labels: &[VaPoint], eps: f64) -> Result<f64, LossError> {
    check_context_inputs(preds.len(), labels.len(), eps)?;
    let mut total = 0.0;
    let mut kept = 0usize;
    for i in 0..preds.len() - 1 {
        let l = delta_vector(labels[i], labels[i + 1]);
        let ln = l[0].hypot(l[1]);
        if ln < eps {
            continue;
        }
        let p = delta_vector(preds[i], preds[i + 1]);
        let pn = p[0].hypot(p[1]).max(eps);
        let cos = (p[0] * l[0] + p[1] * l[1]) / (pn * ln.max(eps));
        total += 1.0 - cos;
        kept += 1;
    }
    Ok(if kept == 0 { 0.0 } else { total / kept as f64 })
}

fn check_context_inputs(preds: usize, labels: usize, eps: f64) -> Result<(), LossError> {
    if preds != labels {
        return Err(LossError::Length {
            what: "context labels",
            expected: preds,
            actual: labels,
        });
    }
    if preds < 2 {
        return Err(LossError::Contract(format!(
            "context loss needs at least two segments, got {preds}"
        )));
    }
    if eps <= 0.0 {
        return Err(LossError::Contract(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Weights of the four loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub emotion: f64,
    pub valence: f64,
    pub arousal: f64,
    pub context: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            emotion: 1.0,
            valence: 1.0,
            arousal: 1.0,
            context: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.emotion, self.valence, self.arousal, self.context]
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let w = self.as_array();
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || w.iter().all(|&x| x == 0.0) {
            return Err(LossError::Weights(w));
        }
        Ok(())
    }

    /// Weighted sum of `[emotion, valence, arousal, context]` nodes.
    pub fn combine(&self, g: &mut Graph, parts: [Var; 4]) -> Result<Var, LossError> {
        self.validate()?;
        let mut total: Option<Var> = None;
        for (part, w) in parts.into_iter().zip(self.as_array()) {
            let term = g.scale(part, w)?;
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        Ok(total.expect("four parts"))
    }
}

/// Values of the four loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub emotion: f64,
    pub valence: f64,
    pub arousal: f64,
    pub context: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn new(parts: [f64; 4], weights: LossWeights) -> Result<Self, LossError> {
        weights.validate()?;
        Ok(Self {
            emotion: parts[0],
            valence: parts[1],
            arousal: parts[2],
            context: parts[3],
            total: total_loss(parts, weights),
            weights,
        })
    }

    pub fn parts(&self) -> [f64; 4] {
        [self.emotion, self.valence, self.arousal, self.context]
    }
}

/// `w_e·emotion + w_v·valence + w_a·arousal + w_c·context`.
pub fn total_loss(parts: [f64; 4], weights: LossWeights) -> f64 {
    parts.iter().zip(weights.as_array()).map(|(p, w)| p * w).sum()
}
