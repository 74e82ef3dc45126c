//! Manifest ingestion, composition windows, splitting and synthetic data.
//!
//! Manifest JSON:
//!
//! ```json
//! {"entries": [{"segment_id": "Ses01_F000", "session_id": "Ses01",
//!   "order_index": 0, "emotion": "angry", "valence": 1.5, "arousal": 4.0,
//!   "audio_path": "wav/Ses01_F000.wav",
//!   "frame_paths": ["f/0.png", "f/1.png", "f/2.png"]}]}
//! ```
//!
//! `audio_path` and `frame_paths` are optional and resolve relative to the
//! manifest's directory.

mod features;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion_space::{BasicEmotion, Composition, Emotion, Segment, VaPoint, VA_MAX, VA_MIN};

pub use features::{load_frames, FeatureStore};
pub use synth::{nearest_prototype, synth_dataset, SynthConfig, SynthDataset, PROTOTYPES};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("manifest entry {index} ({segment}): {reason}")]
    Entry { index: usize, segment: String, reason: String },
    #[error("{0}")]
    Config(String),
    #[error("segment {0}: no features in store")]
    MissingFeatures(String),
    #[error("{0}")]
    Features(String),
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub segment_id: String,
    pub session_id: String,
    pub order_index: usize,
    pub emotion: Emotion,
    pub valence: f64,
    pub arousal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_paths: Option<[String; 3]>,
}

impl ManifestEntry {
    pub fn va(&self) -> VaPoint {
        VaPoint::new(self.valence, self.arousal)
    }

    pub fn segment(&self) -> Segment {
        Segment::new(self.segment_id.clone(), self.emotion, self.va())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses and validates a manifest file, including media paths.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        let manifest = Self::from_json(&text).map_err(|message| DataError::Parse {
            path: path.display().to_string(),
            message,
        })?;
        manifest.validate()?;
        manifest.check_media(path.parent().unwrap_or(Path::new(".")))?;
        Ok(manifest)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_json()).map_err(io_error(path))
    }

    /// Unique ids, unique and contiguous order per session, VA in range.
    pub fn validate(&self) -> Result<(), DataError> {
        let entry_err = |index: usize, reason: String| DataError::Entry {
            index,
            segment: self.entries[index].segment_id.clone(),
            reason,
        };
        let mut ids = BTreeSet::new();
        let mut orders: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.segment_id.is_empty() || e.session_id.is_empty() {
                return Err(entry_err(i, "empty segment or session id".into()));
            }
            if !ids.insert(e.segment_id.as_str()) {
                return Err(entry_err(i, "duplicate segment id".into()));
            }
            if !e.va().in_label_range() {
                return Err(entry_err(
                    i,
                    format!("valence/arousal ({}, {}) outside [{VA_MIN}, {VA_MAX}]", e.valence, e.arousal),
                ));
            }
            if let Some(prev) = orders.entry(&e.session_id).or_default().insert(e.order_index, i) {
                return Err(entry_err(
                    i,
                    format!(
                        "order index {} in session {} already used by entry {prev}",
                        e.order_index, e.session_id
                    ),
                ));
            }
        }
        for (session, order) in &orders {
            for (expected, (&got, &i)) in order.iter().enumerate() {
                if got != expected {
                    return Err(entry_err(
                        i,
                        format!("session {session} order indices are not contiguous from 0 (expected {expected}, found {got})"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Checks that every referenced media file exists under `base`.
    pub fn check_media(&self, base: &Path) -> Result<(), DataError> {
        for (i, e) in self.entries.iter().enumerate() {
            let paths = e.audio_path.iter().chain(e.frame_paths.iter().flatten());
            for p in paths {
                if !base.join(p).is_file() {
                    return Err(DataError::Entry {
                        index: i,
                        segment: e.segment_id.clone(),
                        reason: format!("media file {p} not found"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Entries of each session in order-index order, sessions sorted by id.
    pub fn sessions(&self) -> BTreeMap<&str, Vec<&ManifestEntry>> {
        let mut out: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(&e.session_id).or_default().push(e);
        }
        for v in out.values_mut() {
            v.sort_by_key(|e| e.order_index);
        }
        out
    }

    /// Count of segments per basic emotion, in class-index order.
    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for e in &self.entries {
            if let Some(b) = e.emotion.basic() {
                counts[b.index()] += 1;
            }
        }
        counts
    }
}

/// Stride-1 windows of `k` segments within each session, one per segment
/// with a basic-emotion label. Windows with fewer than `k` predecessors are
/// padded at the front by repeating the session's first segment.
pub fn build_compositions(manifest: &DatasetManifest, k: usize) -> Result<Vec<Composition>, DataError> {
    if k == 0 {
        return Err(DataError::Config("composition size must be at least 1".into()));
    }
    let mut out = Vec::new();
    for entries in manifest.sessions().values() {
        for (t, target) in entries.iter().enumerate() {
            if target.emotion.basic().is_none() {
                continue;
            }
            let start = (t + 1).saturating_sub(k);
            let mut window: Vec<Segment> = entries[start..=t].iter().map(|e| e.segment()).collect();
            while window.len() < k {
                window.insert(0, entries[0].segment());
            }
            out.push(Composition::new(window).expect("non-empty window"));
        }
    }
    Ok(out)
}

/// Seeded partition by target-segment id: the sorted distinct target ids
/// are shuffled and the first `round(fraction · n)` become the test set.
/// Both halves keep the input order.
pub fn split(compositions: &[Composition], test_fraction: f64, seed: u64) -> Result<(Vec<Composition>, Vec<Composition>), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Config(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let mut ids: Vec<&str> = compositions.iter().map(|c| c.target().id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let n_test = (test_fraction * ids.len() as f64).round() as usize;
    if n_test == 0 || n_test == ids.len() {
        return Err(DataError::Config(format!(
            "test fraction {test_fraction} over {} targets leaves an empty split",
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids: BTreeSet<&str> = ids[..n_test].iter().copied().collect();
    let (test, train): (Vec<_>, Vec<_>) = compositions.iter().cloned().partition(|c| test_ids.contains(c.target().id.as_str()));
    Ok((train, test))
}

/// Target labels of a composition list, one per composition.
pub fn target_labels(compositions: &[Composition]) -> Vec<BasicEmotion> {
    compositions
        .iter()
        .map(|c| c.target().emotion.basic().expect("compositions have basic targets"))
        .collect()
}
