//! Synthetic sessions with emotional continuity.
//!
//! Each session follows a latent valence-arousal random walk (uniform step
//! in `[-drift, drift]` per coordinate, reflected at the label bounds). A
//! segment's label is the nearest emotion prototype to its latent point.
//! Its features encode a noisy "expressed" point, `latent + noise·ξ` with a
//! fresh standard normal `ξ` per segment and modality, through fixed random
//! linear maps, plus small per-element noise. Neighbouring segments thus
//! carry independent evidence about nearby latent points, which is what
//! context can exploit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetManifest, FeatureStore, ManifestEntry};
use crate::autodiff::Tensor;
use crate::emotion_space::{BasicEmotion, VaPoint, VA_MAX, VA_MIN};
use crate::model::SegmentFeatures;

/// Generator prototypes in valence-arousal space, in class-index order.
pub const PROTOTYPES: [(BasicEmotion, VaPoint); 4] = [
    (BasicEmotion::Angry, VaPoint::new(1.5, 4.2)),
    (BasicEmotion::Happy, VaPoint::new(4.2, 3.8)),
    (BasicEmotion::Neutral, VaPoint::new(3.0, 2.8)),
    (BasicEmotion::Sad, VaPoint::new(1.8, 1.8)),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sessions: usize,
    pub segments_per_session: usize,
    /// Largest per-coordinate latent step between adjacent segments.
    pub drift: f64,
    /// Standard deviation of the per-segment expression offset, in VA units.
    pub noise: f64,
    /// Standard deviation of independent per-element feature noise.
    pub frame_noise: f64,
    /// Audio frames per segment.
    pub frames: usize,
    pub audio_bins: usize,
    /// `[height, width]` of each grayscale visual frame.
    pub visual_size: [usize; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sessions: 40,
            segments_per_session: 12,
            drift: 0.5,
            noise: 0.8,
            frame_noise: 0.1,
            frames: 12,
            audio_bins: 256,
            visual_size: [16, 16],
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        if self.sessions == 0 || self.segments_per_session == 0 {
            return bad("sessions and segments_per_session must be positive");
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return bad("drift must be finite and non-negative");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.frame_noise >= 0.0 && self.frame_noise.is_finite()) {
            return bad("noise and frame_noise must be finite and non-negative");
        }
        if self.frames == 0 || self.audio_bins == 0 || self.visual_size.contains(&0) {
            return bad("frames, audio_bins and visual_size must be positive");
        }
        Ok(())
    }
}

pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub features: FeatureStore,
    /// Latent point of every manifest entry, in manifest order.
    pub latent: Vec<VaPoint>,
}

pub fn nearest_prototype(p: VaPoint) -> BasicEmotion {
    PROTOTYPES
        .iter()
        .min_by(|a, b| p.distance(&a.1).total_cmp(&p.distance(&b.1)))
        .map(|(e, _)| *e)
        .unwrap()
}

fn reflect(x: f64) -> f64 {
    if x < VA_MIN {
        2.0 * VA_MIN - x
    } else if x > VA_MAX {
        2.0 * VA_MAX - x
    } else {
        x
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pixels = cfg.visual_size[0] * cfg.visual_size[1];
    // Fixed linear maps from a centred VA point to each feature row/pixel.
    let audio_map: Vec<[f64; 2]> = (0..cfg.audio_bins).map(|_| [gaussian(&mut rng) * 0.5, gaussian(&mut rng) * 0.5]).collect();
    let visual_map: Vec<[f64; 2]> = (0..pixels).map(|_| [gaussian(&mut rng) * 0.5, gaussian(&mut rng) * 0.5]).collect();
    let centre = (VA_MIN + VA_MAX) / 2.0;

    let mut entries = Vec::new();
    let mut features = FeatureStore::new();
    let mut latent = Vec::new();
    for s in 0..cfg.sessions {
        let session_id = format!("syn{s:03}");
        let mut p = VaPoint::new(rng.gen_range(VA_MIN..=VA_MAX), rng.gen_range(VA_MIN..=VA_MAX));
        for j in 0..cfg.segments_per_session {
            if j > 0 {
                let step = |rng: &mut ChaCha8Rng| if cfg.drift > 0.0 { rng.gen_range(-cfg.drift..=cfg.drift) } else { 0.0 };
                p = VaPoint::new(reflect(p.valence + step(&mut rng)), reflect(p.arousal + step(&mut rng)));
            }
            let express = |rng: &mut ChaCha8Rng| {
                [
                    p.valence - centre + cfg.noise * gaussian(rng),
                    p.arousal - centre + cfg.noise * gaussian(rng),
                ]
            };
            let a = express(&mut rng);
            let mut audio = Vec::with_capacity(cfg.audio_bins * cfg.frames);
            for m in &audio_map {
                for _ in 0..cfg.frames {
                    audio.push(m[0] * a[0] + m[1] * a[1] + cfg.frame_noise * gaussian(&mut rng));
                }
            }
            let v = express(&mut rng);
            let mut visual = Vec::with_capacity(3 * pixels);
            for _ in 0..3 {
                for m in &visual_map {
                    visual.push(m[0] * v[0] + m[1] * v[1] + cfg.frame_noise * gaussian(&mut rng));
                }
            }
            let segment_id = format!("{session_id}_{j:03}");
            features.insert(
                segment_id.clone(),
                SegmentFeatures {
                    audio: Some(Tensor::new(vec![cfg.audio_bins, cfg.frames], audio).expect("finite")),
                    visual: Some(Tensor::new(vec![3, 1, cfg.visual_size[0], cfg.visual_size[1]], visual).expect("finite")),
                },
            );
            entries.push(ManifestEntry {
                segment_id,
                session_id: session_id.clone(),
                order_index: j,
                emotion: nearest_prototype(p).emotion(),
                valence: p.valence,
                arousal: p.arousal,
                audio_path: None,
                frame_paths: None,
            });
            latent.push(p);
        }
    }
    Ok(SynthDataset {
        manifest: DatasetManifest { entries },
        features,
        latent,
    })
}
