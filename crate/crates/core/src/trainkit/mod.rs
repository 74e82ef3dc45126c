//! Training loop, optimizers, evaluation metrics and ablation switches.

mod metrics;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::data::{self, DataError, DatasetManifest, FeatureStore};
use crate::emotion_space::{self, Anchors, BasicEmotion, Composition, EmotionSpaceError, VaPoint, DEFAULT_D_MIN};
use crate::losses::{self, LossBreakdown, LossError, LossWeights, DEFAULT_CONTEXT_EPS};
use crate::model::{forward_composition, Model, ModelError, SegmentFeatures, SegmentOutput};

pub use metrics::{
    binned_accuracy, confusion_matrix, disagreement_matrix, half_bin, matrix_csv, mse, per_class_recall, unweighted_accuracy,
    EvalRecord, EvalReport, Matrix4,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    EmotionSpace(#[from] EmotionSpaceError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    Metric(String),
    #[error("training diverged at step {step} (total loss {loss}); last good parameters in {}", checkpoint.as_ref().map_or("<not written>".into(), |p| p.display().to_string()))]
    Diverged { step: usize, loss: f64, checkpoint: Option<PathBuf> },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), TrainError> {
    fs::write(path, contents).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam moment estimates; unused by SGD.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

/// One in-place update. SGD: `p ← p − lr·g`. Adam: bias-corrected first and
/// second moments, `p ← p − lr·m̂/(√v̂ + ε)`.
pub fn optimizer_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimizerState, cfg: &OptimizerConfig) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
        return Err(TrainError::Config("parameter and gradient shapes disagree".into()));
    }
    state.step += 1;
    match cfg.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *x -= cfg.learning_rate * d;
                }
            }
        }
        OptimizerKind::Adam => {
            if state.first.is_empty() {
                state.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                state.second = state.first.clone();
            }
            let t = state.step as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
                let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
                for i in 0..p.len() {
                    let d = g.data()[i];
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * d;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * d * d;
                    p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Compositions per optimizer step.
    pub batch_size: usize,
    /// Zero is accepted and gives a null update.
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    /// Seeds the train/test split and the per-epoch shuffle.
    pub seed: u64,
    pub test_fraction: f64,
    /// Lower clamp on the anchor distance in the emotion-loss scale.
    pub d_min: f64,
    pub context_eps: f64,
    pub context_loss: bool,
    pub propagation: bool,
    pub r_scaling: bool,
    /// Stop gradients through the preceding segments' predictions in the
    /// context loss.
    pub detach_context: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            seed: 7,
            test_fraction: 0.1,
            d_min: DEFAULT_D_MIN,
            context_eps: DEFAULT_CONTEXT_EPS,
            context_loss: true,
            propagation: true,
            r_scaling: true,
            detach_context: false,
        }
    }
}

impl TrainConfig {
    /// The per-segment baseline: no propagation, no context loss, `R ≡ 1`.
    pub fn seg(self) -> Self {
        Self {
            context_loss: false,
            propagation: false,
            r_scaling: false,
            ..self
        }
    }

    pub fn is_seg(&self) -> bool {
        !self.context_loss && !self.propagation && !self.r_scaling
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) || self.adam_eps <= 0.0 {
            return bad("beta1 and beta2 must lie in [0, 1) and adam_eps must be positive");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        if !(self.d_min > 0.0) || !(self.context_eps > 0.0) {
            return bad("d_min and context_eps must be positive");
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// One composition with everything its loss needs.
#[derive(Debug, Clone)]
pub struct Item {
    pub segment_ids: Vec<String>,
    pub label: BasicEmotion,
    pub r: Vec<f64>,
    pub labels: Vec<VaPoint>,
}

impl Item {
    pub fn target_id(&self) -> &str {
        self.segment_ids.last().expect("non-empty")
    }

    fn features<'a>(&'a self, store: &'a FeatureStore) -> Result<Vec<(&'a str, &'a SegmentFeatures)>, DataError> {
        self.segment_ids.iter().map(|id| Ok((id.as_str(), store.require(id)?))).collect()
    }
}

/// Relabeled train/test compositions plus the anchors behind `R`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub anchors: Anchors,
    pub train: Vec<Item>,
    pub test: Vec<Item>,
}

/// Builds windows of size `k`, splits them by target, computes anchors from
/// the training targets, relabels, and precomputes `R` per segment.
pub fn prepare(manifest: &DatasetManifest, k: usize, cfg: &TrainConfig) -> Result<Prepared, TrainError> {
    let comps = data::build_compositions(manifest, k)?;
    let (train, test) = data::split(&comps, cfg.test_fraction, cfg.seed)?;
    let targets: Vec<_> = train.iter().map(|c| c.target().clone()).collect();
    let anchors = emotion_space::compute_anchors(&targets)?;
    let items = |cs: &[Composition]| -> Result<Vec<Item>, TrainError> {
        cs.iter()
            .map(|c| {
                let c = emotion_space::relabel_composition(c)?;
                let label = c.label().expect("relabeled");
                let anchor = anchors.get(label);
                Ok(Item {
                    segment_ids: c.segments().iter().map(|s| s.id.clone()).collect(),
                    label,
                    r: c
                        .segments()
                        .iter()
                        .map(|s| if cfg.r_scaling { emotion_space::loss_scale_r(anchor, s.va, cfg.d_min) } else { 1.0 })
                        .collect(),
                    labels: c.segments().iter().map(|s| s.va).collect(),
                })
            })
            .collect()
    };
    Ok(Prepared {
        anchors,
        train: items(&train)?,
        test: items(&test)?,
    })
}

/// Verifies that every segment of every item has features the model accepts.
pub fn check_features(model: &Model, items: &[Item], store: &FeatureStore) -> Result<(), TrainError> {
    for item in items {
        for (id, f) in item.features(store)? {
            model.check_features(id, f)?;
        }
    }
    Ok(())
}

/// Loss parts `[emotion, valence, arousal, context]` for one composition.
pub fn composition_parts(g: &mut Graph, outs: &[SegmentOutput], item: &Item, cfg: &TrainConfig) -> Result<[Var; 4], TrainError> {
    let n = outs.len();
    let probs: Vec<Var> = outs.iter().map(|o| o.probs).collect();
    let probs = g.concat(&probs, 0)?;
    let mut onehot = Tensor::zeros(&[n, 4]);
    for row in 0..n {
        onehot.data_mut()[row * 4 + item.label.index()] = 1.0;
    }
    let emotion = losses::emotion_loss(g, probs, &onehot, &item.r)?;
    let column = |g: &mut Graph, pick: fn(&SegmentOutput) -> Var| g.concat(&outs.iter().map(pick).collect::<Vec<_>>(), 0);
    let v = column(g, |o| o.valence)?;
    let valence = losses::va_mse(g, v, &item.labels.iter().map(|p| p.valence).collect::<Vec<_>>())?;
    let a = column(g, |o| o.arousal)?;
    let arousal = losses::va_mse(g, a, &item.labels.iter().map(|p| p.arousal).collect::<Vec<_>>())?;
    let context = if cfg.context_loss {
        let mut preds: Vec<Var> = outs.iter().map(|o| o.va).collect();
        if cfg.detach_context {
            for p in preds.iter_mut().take(n - 1) {
                *p = g.detach(*p);
            }
        }
        losses::context_loss(g, &preds, &item.labels, cfg.context_eps)?
    } else {
        g.leaf(Tensor::scalar(0.0))
    };
    Ok([emotion, valence, arousal, context])
}

/// Mean loss parts over a batch and their weighted total.
/// Also returns the parameter leaves in store order.
fn batch_loss(g: &mut Graph, model: &Model, items: &[&Item], store: &FeatureStore, cfg: &TrainConfig) -> Result<([Var; 4], Var, Vec<Var>), TrainError> {
    let b = model.params.bind(g);
    let mut sums: Option<[Var; 4]> = None;
    for item in items {
        let outs = forward_composition(g, &b, &model.config, &item.features(store)?, cfg.propagation)?;
        let parts = composition_parts(g, &outs, item, cfg)?;
        sums = Some(match sums {
            None => parts,
            Some(acc) => {
                let mut next = acc;
                for i in 0..4 {
                    next[i] = g.add(acc[i], parts[i])?;
                }
                next
            }
        });
    }
    let sums = sums.ok_or_else(|| TrainError::Config("empty batch".into()))?;
    let mut means = sums;
    for m in &mut means {
        *m = g.scale(*m, 1.0 / items.len() as f64)?;
    }
    let total = cfg.weights.combine(g, means)?;
    Ok((means, total, b.vars().to_vec()))
}

/// Forward passes over `items` without gradients: the evaluation report on
/// each target plus the mean loss breakdown.
pub fn assess(model: &Model, items: &[Item], store: &FeatureStore, cfg: &TrainConfig) -> Result<(EvalReport, LossBreakdown), TrainError> {
    if items.is_empty() {
        return Err(TrainError::Config("evaluation needs at least one composition".into()));
    }
    let mut records = Vec::with_capacity(items.len());
    let mut sums = [0.0; 4];
    for item in items {
        let mut g = Graph::unchecked();
        let b = model.params.bind(&mut g);
        let outs = forward_composition(&mut g, &b, &model.config, &item.features(store)?, cfg.propagation)?;
        let parts = composition_parts(&mut g, &outs, item, cfg)?;
        for (s, p) in sums.iter_mut().zip(parts) {
            *s += g.value(p).item();
        }
        let last = outs.last().expect("non-empty").triple(&g);
        let target = item.labels.last().expect("non-empty");
        records.push(EvalRecord {
            target_id: item.target_id().to_string(),
            label: item.label,
            predicted: BasicEmotion::from_index(last.argmax()).expect("four classes"),
            probs: last.probs,
            valence: last.valence,
            arousal: last.arousal,
            valence_label: target.valence,
            arousal_label: target.arousal,
        });
    }
    let n = items.len() as f64;
    let breakdown = LossBreakdown::new(sums.map(|s| s / n), cfg.weights)?;
    Ok((EvalReport::from_records(records), breakdown))
}

pub fn evaluate(model: &Model, items: &[Item], store: &FeatureStore, cfg: &TrainConfig) -> Result<EvalReport, TrainError> {
    Ok(assess(model, items, store, cfg)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Test UA, on the last step of each epoch.
    pub epoch_ua: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-step training loss over the epoch.
    pub train_total: f64,
    pub test: LossBreakdown,
    pub test_ua: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Zero-based epoch of the highest test UA (earliest on ties).
    pub best_epoch: usize,
    pub best_model: Model,
    pub best_report: EvalReport,
    pub final_report: EvalReport,
}

impl TrainOutcome {
    /// Zero-based epoch of the lowest test total loss (earliest on ties).
    pub fn lowest_loss_epoch(&self) -> usize {
        self.epochs
            .iter()
            .min_by(|a, b| a.test.total.total_cmp(&b.test.total).then(a.epoch.cmp(&b.epoch)))
            .map_or(0, |e| e.epoch)
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("step,epoch,emotion,valence,arousal,context,total,epoch_ua\n");
        for r in &self.history {
            let l = r.loss;
            let ua = r.epoch_ua.map_or(String::new(), |u| u.to_string());
            writeln!(s, "{},{},{},{},{},{},{},{ua}", r.step, r.epoch, l.emotion, l.valence, l.arousal, l.context, l.total).unwrap();
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,train_total,test_emotion,test_valence,test_arousal,test_context,test_total,test_ua\n");
        for e in &self.epochs {
            let t = e.test;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                e.epoch, e.train_total, t.emotion, t.valence, t.arousal, t.context, t.total, e.test_ua
            )
            .unwrap();
        }
        s
    }
}

/// Checkpoint metadata shared by every checkpoint of a run.
fn checkpoint_meta(cfg: &TrainConfig, anchors: &Anchors, epoch: usize, ua: Option<f64>) -> serde_json::Value {
    serde_json::json!({ "train": cfg, "anchors": anchors, "epoch": epoch, "ua": ua })
}

/// Trains `model` in place; the final parameters stay in `model`.
///
/// With `out`, writes `history.csv`, `epochs.csv`, `anchors.json`,
/// `final.ckpt` and `best.ckpt` there (and `last_good.ckpt` on divergence).
pub fn train(model: &mut Model, data: &Prepared, store: &FeatureStore, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(TrainError::Config("train and test sets must be non-empty".into()));
    }
    check_features(model, &data.train, store)?;
    check_features(model, &data.test, store)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_file(&dir.join("anchors.json"), data.anchors.to_json() + "\n")?;
    }

    let opt = cfg.optimizer();
    let mut state = OptimizerState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Model, EvalReport)> = None;
    let mut final_report = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for batch in &batches {
            let items: Vec<&Item> = batch.iter().map(|&i| &data.train[i]).collect();
            let mut g = Graph::unchecked();
            let (parts, total, leaves) = batch_loss(&mut g, model, &items, store, cfg)?;
            let loss_value = g.value(total).item();
            let grads = g.backward(total)?;
            let grads: Vec<Tensor> = leaves.iter().map(|&v| grads.get(v)).collect();
            if !loss_value.is_finite() || grads.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                let checkpoint = match out {
                    Some(dir) => {
                        let path = dir.join("last_good.ckpt");
                        model.save(&path, checkpoint_meta(cfg, &data.anchors, epoch, None))?;
                        Some(path)
                    }
                    None => None,
                };
                return Err(TrainError::Diverged {
                    step,
                    loss: loss_value,
                    checkpoint,
                });
            }
            optimizer_step(model.params.tensors_mut(), &grads, &mut state, &opt)?;
            epoch_total += loss_value;
            history.push(StepRecord {
                step,
                epoch,
                loss: LossBreakdown::new(parts.map(|p| g.value(p).item()), cfg.weights)?,
                epoch_ua: None,
            });
            step += 1;
        }

        let (report, test_loss) = assess(model, &data.test, store, cfg)?;
        history.last_mut().expect("at least one step").epoch_ua = Some(report.ua);
        log::info!(
            "epoch {epoch}: train loss {:.4}, test loss {:.4}, test UA {:.2}",
            epoch_total / batches.len() as f64,
            test_loss.total,
            report.ua
        );
        epochs.push(EpochRecord {
            epoch,
            train_total: epoch_total / batches.len() as f64,
            test: test_loss,
            test_ua: report.ua,
        });
        if best.as_ref().is_none_or(|(_, ua, _, _)| report.ua > *ua) {
            best = Some((epoch, report.ua, model.clone(), report.clone()));
        }
        final_report = Some(report);
    }

    let (best_epoch, best_ua, best_model, best_report) = best.expect("at least one epoch");
    let outcome = TrainOutcome {
        history,
        epochs,
        best_epoch,
        best_model,
        best_report,
        final_report: final_report.expect("at least one epoch"),
    };
    if let Some(dir) = out {
        write_file(&dir.join("history.csv"), outcome.history_csv())?;
        write_file(&dir.join("epochs.csv"), outcome.epochs_csv())?;
        let last = cfg.epochs - 1;
        model.save(&dir.join("final.ckpt"), checkpoint_meta(cfg, &data.anchors, last, Some(outcome.final_report.ua)))?;
        outcome
            .best_model
            .save(&dir.join("best.ckpt"), checkpoint_meta(cfg, &data.anchors, best_epoch, Some(best_ua)))?;
    }
    Ok(outcome)
}
