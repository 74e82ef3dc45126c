//! Segment network and cross-segment context propagation.
//!
//! Per segment: backbone features `[T×D]` feed a bidirectional LSTM; the
//! final forward and backward states are concatenated and read by three
//! heads (emotion softmax, valence, arousal). Within a composition, each
//! segment's final state is projected by `U` back to the LSTM input width
//! and prepended as an extra first time step of the next segment.

pub mod checkpoint;
mod params;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::emotion_space::{VA_MAX, VA_MIN};

pub use params::{Bound, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("segment {segment}: missing {modality} features")]
    MissingFeatures { segment: String, modality: &'static str },
    #[error("segment {segment}: {reason}")]
    FeatureShape { segment: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Container(#[from] checkpoint::ContainerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
    Multimodal,
}

impl Modality {
    pub fn uses_audio(self) -> bool {
        matches!(self, Modality::Audio | Modality::Multimodal)
    }

    pub fn uses_visual(self) -> bool {
        matches!(self, Modality::Visual | Modality::Multimodal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub filters: usize,
    /// `[height, width]`.
    pub kernel: [usize; 2],
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub modality: Modality,
    /// Height (mel bands) of the audio input.
    pub audio_bins: usize,
    pub audio_conv: Vec<ConvLayer>,
    /// Non-overlapping max-pool window `[freq, time]` after the audio convs.
    pub audio_pool: [usize; 2],
    pub visual_channels: usize,
    /// `[height, width]` of every visual frame.
    pub visual_size: [usize; 2],
    pub visual_conv: Vec<ConvLayer>,
    pub visual_pool: [usize; 2],
    pub conv_activation: Activation,
    /// Backbone output width D.
    pub feature_dim: usize,
    /// Hidden width H of each LSTM direction.
    pub lstm_hidden: usize,
    /// Hidden width of each head; 0 makes the heads single linear layers.
    pub head_hidden: usize,
    /// Segments per composition k (the target is the last one).
    pub composition_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let conv = |filters, stride| ConvLayer {
            filters,
            kernel: [3, 3],
            stride,
        };
        Self {
            modality: Modality::Audio,
            audio_bins: 256,
            // The visual stack is one conv deeper: audio features are tapped
            // one stage earlier.
            audio_conv: vec![conv(4, 2), conv(4, 1)],
            audio_pool: [4, 1],
            visual_channels: 1,
            visual_size: [16, 16],
            visual_conv: vec![conv(4, 1), conv(4, 1), conv(4, 1)],
            visual_pool: [2, 2],
            conv_activation: Activation::Relu,
            feature_dim: 64,
            lstm_hidden: 64,
            head_hidden: 64,
            composition_size: 3,
            seed: 17,
        }
    }
}

/// Output size of a valid-padding conv/pool stack along one axis.
fn stack_extent(mut n: usize, layers: &[ConvLayer], axis: usize, pool: usize) -> Option<usize> {
    for l in layers {
        let k = l.kernel[axis];
        if k > n || l.stride == 0 {
            return None;
        }
        n = (n - k) / l.stride + 1;
    }
    (pool <= n && pool > 0).then(|| n / pool)
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.feature_dim == 0 || self.lstm_hidden == 0 {
            return bad("feature_dim and lstm_hidden must be positive".into());
        }
        if self.composition_size == 0 {
            return bad("composition_size must be at least 1".into());
        }
        for (name, layers) in [("audio_conv", &self.audio_conv), ("visual_conv", &self.visual_conv)] {
            if layers.iter().any(|l| l.filters == 0 || l.stride == 0 || l.kernel.contains(&0)) {
                return bad(format!("{name}: filters, kernel and stride must be positive"));
            }
        }
        if self.modality.uses_audio() {
            if self.audio_bins == 0 {
                return bad("audio_bins must be positive".into());
            }
            if self.audio_proj_in().is_none() {
                return bad(format!("audio conv stack does not fit {} input bins", self.audio_bins));
            }
        }
        if self.modality.uses_visual() {
            if self.visual_channels == 0 {
                return bad("visual_channels must be positive".into());
            }
            if self.visual_proj_in().is_none() {
                return bad(format!("visual conv stack does not fit {:?} frames", self.visual_size));
            }
        }
        Ok(())
    }

    /// Width of each LSTM input step, which is also the width of the
    /// projected context step.
    pub fn lstm_input(&self) -> usize {
        match self.modality {
            Modality::Multimodal => 2 * self.feature_dim,
            _ => self.feature_dim,
        }
    }

    fn audio_channels_out(&self) -> usize {
        self.audio_conv.last().map_or(1, |l| l.filters)
    }

    fn visual_channels_out(&self) -> usize {
        self.visual_conv.last().map_or(self.visual_channels, |l| l.filters)
    }

    fn audio_proj_in(&self) -> Option<usize> {
        let h = stack_extent(self.audio_bins, &self.audio_conv, 0, self.audio_pool[0])?;
        (h > 0).then(|| h * self.audio_channels_out())
    }

    fn visual_proj_in(&self) -> Option<usize> {
        let h = stack_extent(self.visual_size[0], &self.visual_conv, 0, self.visual_pool[0])?;
        let w = stack_extent(self.visual_size[1], &self.visual_conv, 1, self.visual_pool[1])?;
        (h * w > 0).then(|| h * w * self.visual_channels_out())
    }

    /// Smallest audio frame count the conv stack accepts.
    pub fn min_audio_frames(&self) -> usize {
        (1..10_000)
            .find(|&t| stack_extent(t, &self.audio_conv, 1, self.audio_pool[1]).is_some_and(|n| n > 0))
            .unwrap_or(usize::MAX)
    }
}

/// Backbone inputs for one segment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentFeatures {
    /// `[bins × frames]` spectrogram-like input.
    pub audio: Option<Tensor>,
    /// `[3 × C × H × W]`: start, middle and end frames.
    pub visual: Option<Tensor>,
}

/// Final forward-direction and backward-direction states, each `[1×H]`.
#[derive(Debug, Clone, Copy)]
pub struct HiddenState {
    pub forward_last: Var,
    pub backward_last: Var,
}

/// Emotion distribution plus raw valence/arousal regressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionTriple {
    pub probs: [f64; 4],
    pub valence: f64,
    pub arousal: f64,
}

impl PredictionTriple {
    pub fn argmax(&self) -> usize {
        (0..4).max_by(|&a, &b| self.probs[a].total_cmp(&self.probs[b]).then(b.cmp(&a))).unwrap()
    }
}

/// Graph nodes for one segment's outputs.
#[derive(Debug, Clone, Copy)]
pub struct SegmentOutput {
    /// `[1×4]`.
    pub probs: Var,
    /// `[1×1]`.
    pub valence: Var,
    /// `[1×1]`.
    pub arousal: Var,
    /// `[1×2]` concatenation of valence and arousal.
    pub va: Var,
    pub state: HiddenState,
}

impl SegmentOutput {
    pub fn triple(&self, g: &Graph) -> PredictionTriple {
        let p = g.value(self.probs).data();
        PredictionTriple {
            probs: [p[0], p[1], p[2], p[3]],
            valence: g.value(self.valence).item(),
            arousal: g.value(self.arousal).item(),
        }
    }
}

const HEADS: [(&str, usize); 3] = [("emotion", 4), ("valence", 1), ("arousal", 1)];

/// Initial offset of the valence and arousal output biases.
pub const REGRESSION_CENTRE: f64 = (VA_MIN + VA_MAX) / 2.0;

/// Segment network parameters plus the config that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Seeded initialization, `uniform(−1/√fan_in, 1/√fan_in)` everywhere.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let d = config.feature_dim;
        let h = config.lstm_hidden;
        let input = config.lstm_input();

        if config.modality.uses_audio() {
            let mut channels = 1;
            for (i, l) in config.audio_conv.iter().enumerate() {
                let fan_in = channels * l.kernel[0] * l.kernel[1];
                let shape = [l.filters, channels, l.kernel[0], l.kernel[1]];
                p.insert(format!("audio.conv{i}.kernel"), params::init_uniform(&mut rng, &shape, fan_in));
                channels = l.filters;
            }
            let fan_in = config.audio_proj_in().expect("validated");
            p.insert("audio.proj.weight", params::init_uniform(&mut rng, &[fan_in, d], fan_in));
            p.insert("audio.proj.bias", params::init_uniform(&mut rng, &[d], fan_in));
        }
        if config.modality.uses_visual() {
            let mut channels = config.visual_channels;
            for (i, l) in config.visual_conv.iter().enumerate() {
                let fan_in = channels * l.kernel[0] * l.kernel[1];
                let shape = [l.filters, channels, l.kernel[0], l.kernel[1]];
                p.insert(format!("visual.conv{i}.kernel"), params::init_uniform(&mut rng, &shape, fan_in));
                channels = l.filters;
            }
            let fan_in = config.visual_proj_in().expect("validated");
            p.insert("visual.proj.weight", params::init_uniform(&mut rng, &[fan_in, d], fan_in));
            p.insert("visual.proj.bias", params::init_uniform(&mut rng, &[d], fan_in));
        }
        for dir in ["fwd", "bwd"] {
            p.insert(format!("lstm.{dir}.wx"), params::init_uniform(&mut rng, &[input, 4 * h], h));
            p.insert(format!("lstm.{dir}.wh"), params::init_uniform(&mut rng, &[h, 4 * h], h));
            p.insert(format!("lstm.{dir}.bias"), params::init_uniform(&mut rng, &[4 * h], h));
        }
        p.insert("context.u", params::init_uniform(&mut rng, &[2 * h, input], 2 * h));
        for (name, out) in HEADS {
            let fan_in = if config.head_hidden > 0 {
                let hh = config.head_hidden;
                p.insert(format!("{name}.w1"), params::init_uniform(&mut rng, &[2 * h, hh], 2 * h));
                p.insert(format!("{name}.b1"), params::init_uniform(&mut rng, &[hh], 2 * h));
                hh
            } else {
                2 * h
            };
            p.insert(format!("{name}.w2"), params::init_uniform(&mut rng, &[fan_in, out], fan_in));
            let mut bias = params::init_uniform(&mut rng, &[out], fan_in);
            if name != "emotion" {
                // Regression outputs start around the middle of the label scale.
                bias = bias.map(|b| b + REGRESSION_CENTRE);
            }
            p.insert(format!("{name}.b2"), bias);
        }
        Ok(Self { config, params: p })
    }

    /// Checks that a segment's features match the configured modality.
    pub fn check_features(&self, id: &str, f: &SegmentFeatures) -> Result<(), ModelError> {
        let cfg = &self.config;
        let shape_err = |reason: String| ModelError::FeatureShape {
            segment: id.to_string(),
            reason,
        };
        if cfg.modality.uses_audio() {
            let a = f.audio.as_ref().ok_or_else(|| ModelError::MissingFeatures {
                segment: id.to_string(),
                modality: "audio",
            })?;
            if a.rank() != 2 || a.shape()[0] != cfg.audio_bins {
                return Err(shape_err(format!("audio shape {:?}, expected [{} × frames]", a.shape(), cfg.audio_bins)));
            }
            if a.shape()[1] < cfg.min_audio_frames() {
                return Err(shape_err(format!(
                    "{} audio frames, the backbone needs at least {}",
                    a.shape()[1],
                    cfg.min_audio_frames()
                )));
            }
        }
        if cfg.modality.uses_visual() {
            let v = f.visual.as_ref().ok_or_else(|| ModelError::MissingFeatures {
                segment: id.to_string(),
                modality: "visual",
            })?;
            let expected = [3, cfg.visual_channels, cfg.visual_size[0], cfg.visual_size[1]];
            if v.shape() != expected {
                return Err(shape_err(format!("visual shape {:?}, expected {expected:?}", v.shape())));
            }
        }
        Ok(())
    }

    /// Restores a model from parameters, checking every expected name and shape.
    pub fn from_params(config: ModelConfig, loaded: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let template = Model::new(config.clone())?;
        if loaded.len() != template.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                loaded.len()
            )));
        }
        let mut params = ParamStore::new();
        for ((name, t), (expected_name, expected)) in loaded.into_iter().zip(template.params.iter()) {
            if name != expected_name || t.shape() != expected.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name} {:?} does not match {expected_name} {:?}",
                    t.shape(),
                    expected.shape()
                )));
            }
            params.insert(name, t);
        }
        Ok(Self { config, params })
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }

    /// Writes parameters with the model config (and any extra metadata) in
    /// the header.
    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), ModelError> {
        let meta = serde_json::json!({ "model": self.config, "extra": extra });
        checkpoint::write(path, &meta, &self.named_tensors())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), ModelError> {
        let (meta, tensors) = checkpoint::read(path)?;
        let config: ModelConfig = serde_json::from_value(meta["model"].clone())
            .map_err(|e| ModelError::Checkpoint(format!("model config: {e}")))?;
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((Self::from_params(config, tensors)?, extra))
    }

    /// Runs a composition without recording gradients and returns one
    /// prediction per segment.
    pub fn predict(&self, segments: &[(&str, &SegmentFeatures)], propagate: bool) -> Result<Vec<PredictionTriple>, ModelError> {
        let mut g = Graph::unchecked();
        let b = self.params.bind(&mut g);
        let outs = forward_composition(&mut g, &b, &self.config, segments, propagate)?;
        Ok(outs.iter().map(|o| o.triple(&g)).collect())
    }
}

fn activate(g: &mut Graph, x: Var, act: Activation) -> Result<Var, AutodiffError> {
    match act {
        Activation::Relu => g.relu(x),
        Activation::Tanh => g.tanh(x),
    }
}

/// Row-vector affine map `x·W + b` for `x` of shape `[n×in]`.
fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Audio `[bins × T]` → `[T' × D]` time-major feature sequence.
pub fn audio_backbone(g: &mut Graph, b: &Bound, cfg: &ModelConfig, spec: &Tensor) -> Result<Var, ModelError> {
    let x = g.leaf(spec.clone());
    let mut x = g.reshape(x, &[1, spec.shape()[0], spec.shape()[1]])?;
    for (i, l) in cfg.audio_conv.iter().enumerate() {
        x = g.conv2d(x, b.var(&format!("audio.conv{i}.kernel")), l.stride)?;
        x = activate(g, x, cfg.conv_activation)?;
    }
    x = g.max_pool2d(x, cfg.audio_pool[0], cfg.audio_pool[1])?;
    let s = g.value(x).shape().to_vec();
    let cols = g.reshape(x, &[s[0] * s[1], s[2]])?;
    let steps = g.transpose(cols)?;
    let proj = affine(g, steps, b.var("audio.proj.weight"), b.var("audio.proj.bias"))?;
    Ok(g.tanh(proj)?)
}

/// Visual `[3 × C × H × W]` → `[3 × D]`, one row per frame.
pub fn visual_backbone(g: &mut Graph, b: &Bound, cfg: &ModelConfig, frames: &Tensor) -> Result<Var, ModelError> {
    let s = frames.shape().to_vec();
    let all = g.leaf(frames.clone());
    let mut rows = Vec::with_capacity(s[0]);
    for f in 0..s[0] {
        let frame = g.slice(all, 0, f, 1)?;
        let mut x = g.reshape(frame, &[s[1], s[2], s[3]])?;
        for (i, l) in cfg.visual_conv.iter().enumerate() {
            x = g.conv2d(x, b.var(&format!("visual.conv{i}.kernel")), l.stride)?;
            x = activate(g, x, cfg.conv_activation)?;
        }
        x = g.max_pool2d(x, cfg.visual_pool[0], cfg.visual_pool[1])?;
        let n = g.value(x).len();
        let flat = g.reshape(x, &[1, n])?;
        let proj = affine(g, flat, b.var("visual.proj.weight"), b.var("visual.proj.bias"))?;
        rows.push(g.tanh(proj)?);
    }
    Ok(g.concat(&rows, 0)?)
}

/// Source index in a length-`from` sequence for step `t` of a length-`to`
/// sequence, by nearest-index repetition.
pub fn align_index(t: usize, from: usize, to: usize) -> usize {
    (t * from / to).min(from - 1)
}

/// Resamples the visual rows to the audio length and concatenates per step:
/// `[Ta × Da] ⊕ [Tv × Dv] → [Ta × (Da + Dv)]`.
pub fn fuse_modalities(g: &mut Graph, audio: Var, visual: Var) -> Result<Var, ModelError> {
    let (ta, tv) = (g.value(audio).shape()[0], g.value(visual).shape()[0]);
    let rows: Vec<Var> = (0..ta)
        .map(|t| g.slice(visual, 0, align_index(t, tv, ta), 1))
        .collect::<Result<_, _>>()?;
    let aligned = g.concat(&rows, 0)?;
    Ok(g.concat(&[audio, aligned], 1)?)
}

/// Backbone for the configured modality: `[T × lstm_input]`.
pub fn backbone_forward(g: &mut Graph, b: &Bound, cfg: &ModelConfig, id: &str, f: &SegmentFeatures) -> Result<Var, ModelError> {
    let missing = |modality| ModelError::MissingFeatures {
        segment: id.to_string(),
        modality,
    };
    match cfg.modality {
        Modality::Audio => audio_backbone(g, b, cfg, f.audio.as_ref().ok_or_else(|| missing("audio"))?),
        Modality::Visual => visual_backbone(g, b, cfg, f.visual.as_ref().ok_or_else(|| missing("visual"))?),
        Modality::Multimodal => {
            let a = audio_backbone(g, b, cfg, f.audio.as_ref().ok_or_else(|| missing("audio"))?)?;
            let v = visual_backbone(g, b, cfg, f.visual.as_ref().ok_or_else(|| missing("visual"))?)?;
            fuse_modalities(g, a, v)
        }
    }
}

/// Parameter names of one LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub wx: Var,
    pub wh: Var,
    pub bias: Var,
}

impl LstmParams {
    pub fn bound(b: &Bound, dir: &str) -> Self {
        Self {
            wx: b.var(&format!("lstm.{dir}.wx")),
            wh: b.var(&format!("lstm.{dir}.wh")),
            bias: b.var(&format!("lstm.{dir}.bias")),
        }
    }
}

/// One LSTM direction over the rows of `x` in the given order. Returns the
/// hidden state after each visited row, indexed by row.
fn lstm_direction(g: &mut Graph, x: Var, p: LstmParams, hidden: usize, order: &[usize]) -> Result<Vec<Var>, AutodiffError> {
    let steps = g.value(x).shape()[0];
    let projected = affine(g, x, p.wx, p.bias)?;
    let mut h = g.leaf(Tensor::zeros(&[1, hidden]));
    let mut c = g.leaf(Tensor::zeros(&[1, hidden]));
    let mut outputs = vec![h; steps];
    for &t in order {
        let xt = g.slice(projected, 0, t, 1)?;
        let rec = g.matmul(h, p.wh)?;
        let z = g.add(xt, rec)?;
        let zi = g.slice(z, 1, 0, hidden)?;
        let zf = g.slice(z, 1, hidden, hidden)?;
        let zg = g.slice(z, 1, 2 * hidden, hidden)?;
        let zo = g.slice(z, 1, 3 * hidden, hidden)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let ct = g.tanh(c)?;
        h = g.mul(o, ct)?;
        outputs[t] = h;
    }
    Ok(outputs)
}

/// Bidirectional LSTM over `x` of shape `[T × in]`. Returns the `[T × 2H]`
/// per-step outputs and the final state of each direction.
pub fn bilstm_forward(
    g: &mut Graph,
    x: Var,
    fwd: LstmParams,
    bwd: LstmParams,
    hidden: usize,
) -> Result<(Var, HiddenState), AutodiffError> {
    let steps = g.value(x).shape()[0];
    let forward_order: Vec<usize> = (0..steps).collect();
    let backward_order: Vec<usize> = (0..steps).rev().collect();
    let hf = lstm_direction(g, x, fwd, hidden, &forward_order)?;
    let hb = lstm_direction(g, x, bwd, hidden, &backward_order)?;
    let rows: Vec<Var> = (0..steps)
        .map(|t| g.concat(&[hf[t], hb[t]], 1))
        .collect::<Result<_, _>>()?;
    let out = g.concat(&rows, 0)?;
    Ok((
        out,
        HiddenState {
            forward_last: hf[steps - 1],
            backward_last: hb[0],
        },
    ))
}

/// `[forward_last ; backward_last]` as a `[1 × 2H]` row.
pub fn summary(g: &mut Graph, state: HiddenState) -> Result<Var, AutodiffError> {
    g.concat(&[state.forward_last, state.backward_last], 1)
}

fn head(g: &mut Graph, b: &Bound, name: &str, h: Var, hidden: bool) -> Result<Var, AutodiffError> {
    let x = if hidden {
        let z = affine(g, h, b.var(&format!("{name}.w1")), b.var(&format!("{name}.b1")))?;
        g.tanh(z)?
    } else {
        h
    };
    affine(g, x, b.var(&format!("{name}.w2")), b.var(&format!("{name}.b2")))
}

/// Emotion softmax plus linear valence and arousal from a `[1 × 2H]` row.
pub fn heads_forward(g: &mut Graph, b: &Bound, cfg: &ModelConfig, h: Var) -> Result<(Var, Var, Var), AutodiffError> {
    let hidden = cfg.head_hidden > 0;
    let logits = head(g, b, "emotion", h, hidden)?;
    let probs = g.softmax(logits)?;
    let valence = head(g, b, "valence", h, hidden)?;
    let arousal = head(g, b, "arousal", h, hidden)?;
    Ok((probs, valence, arousal))
}

/// `h_ext = [forward_last ; backward_last] · U`, a `[1 × lstm_input]` row.
pub fn extend_context(g: &mut Graph, state: HiddenState, u: Var) -> Result<Var, AutodiffError> {
    let s = summary(g, state)?;
    g.matmul(s, u)
}

/// Prepends `h_ext` as a new first time step.
pub fn compose_next_input(g: &mut Graph, h_ext: Var, next: Var) -> Result<Var, AutodiffError> {
    g.concat(&[h_ext, next], 0)
}

/// Runs every segment of a composition in order. With `propagate`, each
/// segment after the first receives the previous segment's projected final
/// state as an extra leading input step.
pub fn forward_composition(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    segments: &[(&str, &SegmentFeatures)],
    propagate: bool,
) -> Result<Vec<SegmentOutput>, ModelError> {
    let fwd = LstmParams::bound(b, "fwd");
    let bwd = LstmParams::bound(b, "bwd");
    let u = b.var("context.u");
    let mut outputs: Vec<SegmentOutput> = Vec::with_capacity(segments.len());
    for (id, features) in segments {
        let mut x = backbone_forward(g, b, cfg, id, features)?;
        if propagate {
            if let Some(prev) = outputs.last() {
                let h_ext = extend_context(g, prev.state, u)?;
                x = compose_next_input(g, h_ext, x)?;
            }
        }
        let (_, state) = bilstm_forward(g, x, fwd, bwd, cfg.lstm_hidden)?;
        let h = summary(g, state)?;
        let (probs, valence, arousal) = heads_forward(g, b, cfg, h)?;
        let va = g.concat(&[valence, arousal], 1)?;
        outputs.push(SegmentOutput {
            probs,
            valence,
            arousal,
            va,
            state,
        });
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests;
