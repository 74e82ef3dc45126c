use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::emotion_space::VaPoint;
use crate::losses::{self, LossWeights};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny(modality: Modality) -> ModelConfig {
    let conv = ConvLayer {
        filters: 2,
        kernel: [3, 3],
        stride: 1,
    };
    ModelConfig {
        modality,
        audio_bins: 6,
        audio_conv: vec![conv],
        audio_pool: [2, 1],
        visual_channels: 1,
        visual_size: [6, 6],
        visual_conv: vec![conv, conv],
        visual_pool: [1, 1],
        conv_activation: Activation::Tanh,
        feature_dim: 4,
        lstm_hidden: 3,
        head_hidden: 3,
        composition_size: 2,
        seed: 5,
    }
}

fn features(rng: &mut ChaCha8Rng, cfg: &ModelConfig, frames: usize) -> SegmentFeatures {
    SegmentFeatures {
        audio: cfg.modality.uses_audio().then(|| random_tensor(rng, &[cfg.audio_bins, frames])),
        visual: cfg
            .modality
            .uses_visual()
            .then(|| random_tensor(rng, &[3, cfg.visual_channels, cfg.visual_size[0], cfg.visual_size[1]])),
    }
}

fn composition(feats: &[SegmentFeatures]) -> Vec<(&str, &SegmentFeatures)> {
    const IDS: [&str; 5] = ["s0", "s1", "s2", "s3", "s4"];
    feats.iter().enumerate().map(|(i, f)| (IDS[i], f)).collect()
}

/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over every parameter
/// whose name starts with `prefix`, with central differences of step 1e-5.
fn param_grad_error<F>(model: &Model, prefix: &str, f: F) -> f64
where
    F: Fn(&mut Graph, &Bound) -> Var,
{
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let loss = f(&mut g, &b);
    let grads = g.backward(loss).unwrap();
    let eval = |m: &Model| {
        let mut g = Graph::new();
        let b = m.params.bind(&mut g);
        let loss = f(&mut g, &b);
        g.value(loss).item()
    };
    let step = 1e-5;
    let (mut diff, mut an, mut nn) = (0.0, 0.0, 0.0);
    let mut checked = 0;
    for (i, name) in model.params.names().iter().enumerate() {
        if !name.starts_with(prefix) {
            continue;
        }
        let analytic = grads.get(b.vars()[i]);
        for j in 0..analytic.len() {
            let mut plus = model.clone();
            plus.params.tensors_mut()[i].data_mut()[j] += step;
            let mut minus = model.clone();
            minus.params.tensors_mut()[i].data_mut()[j] -= step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = analytic.data()[j];
            diff += (a - numeric).powi(2);
            an += a * a;
            nn += numeric * numeric;
            checked += 1;
        }
    }
    assert!(checked > 0, "no parameters under {prefix}");
    assert!(an > 0.0, "gradient under {prefix} is identically zero");
    diff.sqrt() / an.sqrt().max(nn.sqrt())
}

/// Weighted total loss over a composition: R-scaled emotion loss and
/// regression losses on every segment, context loss across adjacent ones.
fn composition_loss(g: &mut Graph, outs: &[SegmentOutput], labels: &[VaPoint], target: usize, r: &[f64]) -> Var {
    let n = outs.len();
    let probs: Vec<Var> = outs.iter().map(|o| o.probs).collect();
    let probs = g.concat(&probs, 0).unwrap();
    let mut onehot = Tensor::zeros(&[n, 4]);
    for row in 0..n {
        onehot.data_mut()[row * 4 + target] = 1.0;
    }
    let emotion = losses::emotion_loss(g, probs, &onehot, r).unwrap();
    let v: Vec<Var> = outs.iter().map(|o| o.valence).collect();
    let v = g.concat(&v, 0).unwrap();
    let valence = losses::va_mse(g, v, &labels.iter().map(|p| p.valence).collect::<Vec<_>>()).unwrap();
    let a: Vec<Var> = outs.iter().map(|o| o.arousal).collect();
    let a = g.concat(&a, 0).unwrap();
    let arousal = losses::va_mse(g, a, &labels.iter().map(|p| p.arousal).collect::<Vec<_>>()).unwrap();
    let preds: Vec<Var> = outs.iter().map(|o| o.va).collect();
    let context = losses::context_loss(g, &preds, labels, losses::DEFAULT_CONTEXT_EPS).unwrap();
    LossWeights::default().combine(g, [emotion, valence, arousal, context]).unwrap()
}

#[test]
fn default_config_maps_audio_to_time_major_sequence() {
    let cfg = ModelConfig::default();
    let model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = random_tensor(&mut rng, &[256, 40]);
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let seq = audio_backbone(&mut g, &b, &cfg, &spec).unwrap();
    let shape = g.value(seq).shape();
    assert!(shape[0] > 0);
    assert_eq!(shape[1], cfg.feature_dim);

    let again = audio_backbone(&mut g, &b, &cfg, &spec).unwrap();
    assert_eq!(g.value(seq), g.value(again));
}

#[test]
fn visual_backbone_yields_one_row_per_frame() {
    let cfg = ModelConfig {
        modality: Modality::Visual,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames = random_tensor(&mut rng, &[3, 1, 16, 16]);
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let seq = visual_backbone(&mut g, &b, &cfg, &frames).unwrap();
    assert_eq!(g.value(seq).shape(), &[3, cfg.feature_dim]);
}

#[test]
fn mismatched_features_are_rejected_by_segment() {
    let cfg = tiny(Modality::Audio);
    let model = Model::new(cfg.clone()).unwrap();
    let wrong = SegmentFeatures {
        audio: Some(Tensor::zeros(&[cfg.audio_bins + 1, 5])),
        visual: None,
    };
    let err = model.check_features("ses1_F003", &wrong).unwrap_err();
    assert!(err.to_string().contains("ses1_F003"), "{err}");
    let err = model.predict(&[("ses1_F004", &SegmentFeatures::default())], true).unwrap_err();
    assert!(err.to_string().contains("ses1_F004"), "{err}");
    let short = SegmentFeatures {
        audio: Some(Tensor::zeros(&[cfg.audio_bins, 2])),
        visual: None,
    };
    assert!(model.check_features("x", &short).is_err());
}

#[test]
fn backbone_gradients_match_finite_differences() {
    for modality in [Modality::Audio, Modality::Visual] {
        let cfg = tiny(modality);
        let model = Model::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = features(&mut rng, &cfg, 5);
        let w = random_tensor(&mut rng, &[3, 4]);
        let err = param_grad_error(&model, if modality == Modality::Audio { "audio" } else { "visual" }, |g, b| {
            let seq = backbone_forward(g, b, &cfg, "s", &f).unwrap();
            let w = g.leaf(w.clone());
            let y = g.mul(seq, w).unwrap();
            g.sum(y).unwrap()
        });
        assert!(err <= 1e-5, "{modality:?}: {err}");
    }
}

/// Plain-loop LSTM for one direction, gate order i, f, g, o.
fn manual_lstm(x: &[Vec<f64>], wx: &Tensor, wh: &Tensor, bias: &Tensor, order: &[usize]) -> Vec<Vec<f64>> {
    let h_dim = wh.shape()[0];
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut out = vec![Vec::new(); x.len()];
    for &t in order {
        let mut z = bias.data().to_vec();
        for (k, zk) in z.iter_mut().enumerate() {
            for (i, xi) in x[t].iter().enumerate() {
                *zk += xi * wx.at2(i, k);
            }
            for (i, hi) in h.iter().enumerate() {
                *zk += hi * wh.at2(i, k);
            }
        }
        for j in 0..h_dim {
            let gi = sig(z[j]);
            let gf = sig(z[h_dim + j]);
            let gg = z[2 * h_dim + j].tanh();
            let go = sig(z[3 * h_dim + j]);
            c[j] = gf * c[j] + gi * gg;
            h[j] = go * c[j].tanh();
        }
        out[t] = h.clone();
    }
    out
}

#[test]
fn bilstm_matches_hand_unrolled_recurrence() {
    let (t_len, d, h) = (3, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, &[t_len, d]);
    let p: Vec<Tensor> = [[d, 4 * h], [h, 4 * h], [1, 4 * h]]
        .iter()
        .cycle()
        .take(6)
        .map(|s| random_tensor(&mut rng, s))
        .collect();
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let vars: Vec<Var> = p.iter().map(|t| g.leaf(t.clone())).collect();
    let fwd = LstmParams {
        wx: vars[0],
        wh: vars[1],
        bias: vars[2],
    };
    let bwd = LstmParams {
        wx: vars[3],
        wh: vars[4],
        bias: vars[5],
    };
    let (out, state) = bilstm_forward(&mut g, xv, fwd, bwd, h).unwrap();

    let rows: Vec<Vec<f64>> = x.data().chunks(d).map(<[f64]>::to_vec).collect();
    let hf = manual_lstm(&rows, &p[0], &p[1], &p[2], &[0, 1, 2]);
    let hb = manual_lstm(&rows, &p[3], &p[4], &p[5], &[2, 1, 0]);
    let out = g.value(out);
    assert_eq!(out.shape(), &[t_len, 2 * h]);
    for t in 0..t_len {
        for j in 0..h {
            assert!((out.at2(t, j) - hf[t][j]).abs() <= 1e-12);
            assert!((out.at2(t, h + j) - hb[t][j]).abs() <= 1e-12);
        }
    }
    for j in 0..h {
        assert!((g.value(state.forward_last).data()[j] - hf[2][j]).abs() <= 1e-12);
        assert!((g.value(state.backward_last).data()[j] - hb[0][j]).abs() <= 1e-12);
    }
}

#[test]
fn bilstm_single_step_and_zero_fixed_point() {
    let cfg = tiny(Modality::Audio);
    let mut model = Model::new(cfg.clone()).unwrap();
    for name in ["lstm.fwd.bias", "lstm.bwd.bias"] {
        let t = model.params.get_mut(name).unwrap();
        *t = Tensor::zeros(t.shape());
    }
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let x = g.leaf(Tensor::zeros(&[5, cfg.lstm_input()]));
    let (out, state) = bilstm_forward(&mut g, x, LstmParams::bound(&b, "fwd"), LstmParams::bound(&b, "bwd"), 3).unwrap();
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    assert!(g.value(state.forward_last).data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let one = g.leaf(random_tensor(&mut rng, &[1, cfg.lstm_input()]));
    let (out, state) = bilstm_forward(&mut g, one, LstmParams::bound(&b, "fwd"), LstmParams::bound(&b, "bwd"), 3).unwrap();
    let row = g.value(out).data().to_vec();
    assert_eq!(&row[..3], g.value(state.forward_last).data());
    assert_eq!(&row[3..], g.value(state.backward_last).data());
    assert!(row.iter().any(|&v| v != 0.0));
}

#[test]
fn reversing_input_swaps_directions_under_parameter_swap() {
    let (t_len, d, h) = (5, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[t_len, d]);
    let reversed = Tensor::new(vec![t_len, d], x.data().chunks(d).rev().flatten().copied().collect()).unwrap();
    let a: Vec<Tensor> = [[d, 4 * h], [h, 4 * h], [1, 4 * h]].iter().map(|s| random_tensor(&mut rng, s)).collect();
    let c: Vec<Tensor> = [[d, 4 * h], [h, 4 * h], [1, 4 * h]].iter().map(|s| random_tensor(&mut rng, s)).collect();
    let run = |x: &Tensor, p: &[Tensor], q: &[Tensor]| {
        let mut g = Graph::new();
        let x = g.leaf(x.clone());
        let lp = |g: &mut Graph, t: &[Tensor]| LstmParams {
            wx: g.leaf(t[0].clone()),
            wh: g.leaf(t[1].clone()),
            bias: g.leaf(t[2].clone()),
        };
        let (f, b) = (lp(&mut g, p), lp(&mut g, q));
        let (_, s) = bilstm_forward(&mut g, x, f, b, h).unwrap();
        (g.value(s.forward_last).clone(), g.value(s.backward_last).clone())
    };
    let (f1, b1) = run(&x, &a, &c);
    let (f2, b2) = run(&reversed, &c, &a);
    assert_eq!(f1, b2);
    assert_eq!(b1, f2);
}

#[test]
fn zero_heads_give_uniform_and_zero_regression() {
    let cfg = tiny(Modality::Audio);
    let mut model = Model::new(cfg.clone()).unwrap();
    for (name, t) in model.params.names().to_vec().iter().zip(model.params.tensors_mut()) {
        if ["emotion.", "valence.", "arousal."].iter().any(|p| name.starts_with(p)) {
            *t = Tensor::zeros(t.shape());
        }
    }
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = g.leaf(random_tensor(&mut rng, &[1, 6]));
    let (p, v, a) = heads_forward(&mut g, &b, &cfg, h).unwrap();
    assert_eq!(g.value(p).data(), &[0.25; 4]);
    assert_eq!(g.value(v).item(), 0.0);
    assert_eq!(g.value(a).item(), 0.0);
}

#[test]
fn head_gradients_match_finite_differences() {
    for head_hidden in [0, 3] {
        let cfg = ModelConfig {
            head_hidden,
            ..tiny(Modality::Audio)
        };
        let model = Model::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_tensor(&mut rng, &[1, 6]);
        let w = random_tensor(&mut rng, &[1, 4]);
        for prefix in ["emotion", "valence", "arousal"] {
            let err = param_grad_error(&model, prefix, |g, b| {
                let h = g.leaf(h.clone());
                let (p, v, a) = heads_forward(g, b, &cfg, h).unwrap();
                let w = g.leaf(w.clone());
                let pw = g.mul(p, w).unwrap();
                let s = g.sum(pw).unwrap();
                let va = g.mul(v, a).unwrap();
                let va = g.sum(va).unwrap();
                g.add(s, va).unwrap()
            });
            assert!(err <= 1e-5, "{prefix} hidden={head_hidden}: {err}");
        }
    }
}

#[test]
fn context_extension_of_zero_and_identity_maps() {
    let mut g = Graph::new();
    let state = HiddenState {
        forward_last: g.leaf(Tensor::matrix(1, 2, vec![0.3, -0.4]).unwrap()),
        backward_last: g.leaf(Tensor::matrix(1, 2, vec![0.1, 0.9]).unwrap()),
    };
    let zero = g.leaf(Tensor::zeros(&[4, 3]));
    let e = extend_context(&mut g, state, zero).unwrap();
    assert_eq!(g.value(e).data(), &[0.0; 3]);
    let eye = g.leaf(Tensor::eye(4));
    let e = extend_context(&mut g, state, eye).unwrap();
    assert_eq!(g.value(e).data(), &[0.3, -0.4, 0.1, 0.9]);
}

#[test]
fn composed_input_prepends_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let next = random_tensor(&mut rng, &[3, 4]);
    let mut g = Graph::new();
    let h_ext = g.leaf(random_tensor(&mut rng, &[1, 4]));
    let nv = g.leaf(next.clone());
    let x = compose_next_input(&mut g, h_ext, nv).unwrap();
    assert_eq!(g.value(x).shape(), &[4, 4]);
    assert_eq!(&g.value(x).data()[..4], g.value(h_ext).data());
    let rest = g.slice(x, 0, 1, 3).unwrap();
    assert_eq!(g.value(rest), &next);

    let wrong = g.leaf(Tensor::zeros(&[1, 5]));
    assert!(compose_next_input(&mut g, wrong, nv).is_err());
}

#[test]
fn fusion_repeats_visual_rows_by_nearest_index() {
    for (ta, expected) in [(3, vec![0, 1, 2]), (6, vec![0, 0, 1, 1, 2, 2])] {
        let mut g = Graph::new();
        let audio = g.leaf(Tensor::new(vec![ta, 2], (0..ta * 2).map(|v| v as f64).collect()).unwrap());
        let visual = g.leaf(Tensor::new(vec![3, 1], vec![10.0, 11.0, 12.0]).unwrap());
        let fused = fuse_modalities(&mut g, audio, visual).unwrap();
        let f = g.value(fused);
        assert_eq!(f.shape(), &[ta, 3]);
        for (t, &src) in expected.iter().enumerate() {
            assert_eq!(f.at2(t, 0), (2 * t) as f64);
            assert_eq!(f.at2(t, 2), 10.0 + src as f64);
        }
    }
}

#[test]
fn multimodal_composition_runs() {
    let cfg = tiny(Modality::Multimodal);
    let model = Model::new(cfg.clone()).unwrap();
    assert_eq!(model.params.get("context.u").unwrap().shape(), &[6, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let feats: Vec<_> = (0..2).map(|_| features(&mut rng, &cfg, 7)).collect();
    let preds = model.predict(&composition(&feats), true).unwrap();
    assert_eq!(preds.len(), 2);
}

#[test]
fn single_segment_composition_has_no_context() {
    let cfg = tiny(Modality::Audio);
    let model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f = features(&mut rng, &cfg, 5);
    let with = model.predict(&[("a", &f)], true).unwrap();
    let without = model.predict(&[("a", &f)], false).unwrap();
    assert_eq!(with, without);
}

#[test]
fn zero_projection_equals_context_free_pass_with_zero_step() {
    let cfg = tiny(Modality::Audio);
    let mut model = Model::new(cfg.clone()).unwrap();
    *model.params.get_mut("context.u").unwrap() = Tensor::zeros(&[6, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let feats: Vec<_> = (0..3).map(|_| features(&mut rng, &cfg, 5)).collect();
    let composed = model.predict(&composition(&feats), true).unwrap();

    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let x = backbone_forward(&mut g, &b, &cfg, "s2", &feats[2]).unwrap();
    let zero = g.leaf(Tensor::zeros(&[1, 4]));
    let x = g.concat(&[zero, x], 0).unwrap();
    let (_, state) = bilstm_forward(&mut g, x, LstmParams::bound(&b, "fwd"), LstmParams::bound(&b, "bwd"), 3).unwrap();
    let h = summary(&mut g, state).unwrap();
    let (p, v, a) = heads_forward(&mut g, &b, &cfg, h).unwrap();
    let manual = SegmentOutput {
        probs: p,
        valence: v,
        arousal: a,
        va: v,
        state,
    }
    .triple(&g);
    assert_eq!(composed[2], manual);
}

#[test]
fn context_path_carries_segment_one_into_segment_two() {
    let cfg = tiny(Modality::Audio);
    let model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let feats: Vec<_> = (0..2).map(|_| features(&mut rng, &cfg, 5)).collect();
    let mut perturbed = feats.clone();
    perturbed[0].audio = Some(features(&mut rng, &cfg, 5).audio.unwrap());

    let base = model.predict(&composition(&feats), true).unwrap();
    let moved = model.predict(&composition(&perturbed), true).unwrap();
    assert!((base[1].valence - moved[1].valence).abs() > 1e-9);

    let base = model.predict(&composition(&feats), false).unwrap();
    let moved = model.predict(&composition(&perturbed), false).unwrap();
    assert_eq!(base[1], moved[1]);
}

#[test]
fn second_segment_loss_reaches_projection_and_matches_finite_differences() {
    let cfg = tiny(Modality::Audio);
    let model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let feats: Vec<_> = (0..2).map(|_| features(&mut rng, &cfg, 5)).collect();
    let second_only = |g: &mut Graph, b: &Bound| {
        let outs = forward_composition(g, b, &cfg, &composition(&feats), true).unwrap();
        let s = g.sum(outs[1].probs).unwrap();
        let s = g.mul(s, outs[1].valence).unwrap();
        g.add(s, outs[1].arousal).unwrap()
    };
    let err = param_grad_error(&model, "context.u", second_only);
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn full_loss_gradient_through_two_segments_matches_finite_differences() {
    let cfg = tiny(Modality::Audio);
    let model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let feats: Vec<_> = (0..2).map(|_| features(&mut rng, &cfg, 5)).collect();
    let labels = [VaPoint::new(2.0, 3.5), VaPoint::new(3.5, 2.5)];
    let err = param_grad_error(&model, "", |g, b| {
        let outs = forward_composition(g, b, &cfg, &composition(&feats), true).unwrap();
        composition_loss(g, &outs, &labels, 1, &[1.4, 2.0])
    });
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn seeded_initialization_and_prediction_are_bitwise_stable() {
    let cfg = tiny(Modality::Multimodal);
    let a = Model::new(cfg.clone()).unwrap();
    let b = Model::new(cfg.clone()).unwrap();
    assert_eq!(a, b);
    let c = Model::new(ModelConfig { seed: 6, ..cfg.clone() }).unwrap();
    assert_ne!(a, c);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let feats: Vec<_> = (0..3).map(|_| features(&mut rng, &cfg, 6)).collect();
    let pa = a.predict(&composition(&feats), true).unwrap();
    let pb = b.predict(&composition(&feats), true).unwrap();
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(x.probs.map(f64::to_bits), y.probs.map(f64::to_bits));
        assert_eq!(x.valence.to_bits(), y.valence.to_bits());
    }
}

#[test]
fn checkpoint_round_trip_restores_model() {
    let cfg = tiny(Modality::Multimodal);
    let model = Model::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path, serde_json::json!({"epoch": 3})).unwrap();
    let (back, extra) = Model::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(extra["epoch"], 3);
    let first = std::fs::read(&path).unwrap();
    back.save(&path, extra).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let mut wrong = model.named_tensors();
    wrong.pop();
    assert!(Model::from_params(model.config.clone(), wrong).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let too_deep = ModelConfig {
        audio_bins: 3,
        ..tiny(Modality::Audio)
    };
    assert!(Model::new(too_deep).is_err());
    assert!(Model::new(ModelConfig {
        lstm_hidden: 0,
        ..tiny(Modality::Audio)
    })
    .is_err());
    assert!(Model::new(ModelConfig {
        composition_size: 0,
        ..tiny(Modality::Audio)
    })
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_one_valid_triple_per_segment(
        k in 1usize..5,
        frames in 3usize..9,
        seed in any::<u64>(),
        modality in prop::sample::select(vec![Modality::Audio, Modality::Visual, Modality::Multimodal]),
    ) {
        let cfg = ModelConfig { seed, ..tiny(modality) };
        let model = Model::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<_> = (0..k).map(|_| features(&mut rng, &cfg, frames)).collect();
        let preds = model.predict(&composition(&feats), true).unwrap();
        prop_assert_eq!(preds.len(), k);
        for p in preds {
            prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.probs.iter().all(|&q| q > 0.0));
            prop_assert!(p.valence.is_finite() && p.arousal.is_finite());
        }
    }

    #[test]
    fn prop_fused_width_is_sum_of_widths(ta in 1usize..12, da in 1usize..5, dv in 1usize..5) {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::ones(&[ta, da]));
        let v = g.leaf(Tensor::ones(&[3, dv]));
        let f = fuse_modalities(&mut g, a, v).unwrap();
        prop_assert_eq!(g.value(f).shape(), &[ta, da + dv]);
    }
}
