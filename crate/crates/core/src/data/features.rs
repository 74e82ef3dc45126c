use std::collections::BTreeMap;
use std::path::Path;

use super::{io_error, DataError};
use crate::autodiff::Tensor;
use crate::model::checkpoint;
use crate::model::SegmentFeatures;

/// Per-segment backbone inputs keyed by segment id, stored in the tensor
/// container as `audio/<id>` and `visual/<id>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureStore {
    segments: BTreeMap<String, SegmentFeatures>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, features: SegmentFeatures) {
        self.segments.insert(id.into(), features);
    }

    pub fn get(&self, id: &str) -> Option<&SegmentFeatures> {
        self.segments.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&SegmentFeatures, DataError> {
        self.get(id).ok_or_else(|| DataError::MissingFeatures(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SegmentFeatures)> {
        self.segments.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (id, f) in &self.segments {
            if let Some(a) = &f.audio {
                out.push((format!("audio/{id}"), a.clone()));
            }
            if let Some(v) = &f.visual {
                out.push((format!("visual/{id}"), v.clone()));
            }
        }
        out
    }

    pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<Self, DataError> {
        let mut store = Self::new();
        for (name, t) in tensors {
            let (kind, id) = name
                .split_once('/')
                .ok_or_else(|| DataError::Features(format!("tensor name {name} is not <modality>/<segment>")))?;
            let slot = store.segments.entry(id.to_string()).or_default();
            match kind {
                "audio" => slot.audio = Some(t),
                "visual" => slot.visual = Some(t),
                other => return Err(DataError::Features(format!("unknown modality {other} in {name}"))),
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        checkpoint::write(path, &serde_json::json!({ "kind": "features" }), &self.to_tensors())
            .map_err(|e| DataError::Features(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        if !path.is_file() {
            return Err(io_error(path)(std::io::Error::new(std::io::ErrorKind::NotFound, "feature store not found")));
        }
        let (_, tensors) = checkpoint::read(path).map_err(|e| DataError::Features(e.to_string()))?;
        Self::from_tensors(tensors)
    }
}

/// Loads three frames as grayscale `[3 × 1 × H × W]` with values in [0, 1],
/// resized to `size = [H, W]`.
pub fn load_frames(paths: &[impl AsRef<Path>; 3], size: [usize; 2]) -> Result<Tensor, DataError> {
    let [h, w] = size;
    let mut data = Vec::with_capacity(3 * h * w);
    for p in paths {
        let p = p.as_ref();
        let img = image::open(p).map_err(|e| DataError::Features(format!("{}: {e}", p.display())))?;
        let gray = image::imageops::resize(&img.to_luma8(), w as u32, h as u32, image::imageops::FilterType::Triangle);
        data.extend(gray.pixels().map(|px| px.0[0] as f64 / 255.0));
    }
    Ok(Tensor::new(vec![3, 1, h, w], data).expect("finite pixels"))
}
