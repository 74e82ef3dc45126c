//! Valence-arousal coordinates, per-emotion anchors, composition relabeling
//! and the distance-based loss scale.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower and upper ends of the annotation scale.
pub const VA_MIN: f64 = 1.0;
pub const VA_MAX: f64 = 5.0;

/// Default clamp on the anchor distance used by [`loss_scale_r`].
pub const DEFAULT_D_MIN: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmotionSpaceError {
    #[error("no segment labelled {0}; anchors need every basic emotion")]
    MissingClass(BasicEmotion),
    #[error("composition target {id} is labelled {emotion}, not a basic emotion")]
    NonBasicTarget { id: String, emotion: Emotion },
    #[error("empty composition")]
    EmptyComposition,
    #[error("valence/arousal ({valence}, {arousal}) outside [1, 5]")]
    OutOfRange { valence: f64, arousal: f64 },
    #[error("unknown emotion label {0:?}")]
    UnknownEmotion(String),
}

/// The ten categorical labels of the source annotation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Angry,
    Happy,
    Neutral,
    Sad,
    Excited,
    Frustrated,
    Fear,
    Surprise,
    Disgust,
    Other,
}

impl Emotion {
    pub const ALL: [Emotion; 10] = [
        Emotion::Angry,
        Emotion::Happy,
        Emotion::Neutral,
        Emotion::Sad,
        Emotion::Excited,
        Emotion::Frustrated,
        Emotion::Fear,
        Emotion::Surprise,
        Emotion::Disgust,
        Emotion::Other,
    ];

    pub fn basic(self) -> Option<BasicEmotion> {
        match self {
            Emotion::Angry => Some(BasicEmotion::Angry),
            Emotion::Happy => Some(BasicEmotion::Happy),
            Emotion::Neutral => Some(BasicEmotion::Neutral),
            Emotion::Sad => Some(BasicEmotion::Sad),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Happy => "happy",
            Emotion::Neutral => "neutral",
            Emotion::Sad => "sad",
            Emotion::Excited => "excited",
            Emotion::Frustrated => "frustrated",
            Emotion::Fear => "fear",
            Emotion::Surprise => "surprise",
            Emotion::Disgust => "disgust",
            Emotion::Other => "other",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = EmotionSpaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Emotion::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EmotionSpaceError::UnknownEmotion(s.to_string()))
    }
}

/// The four prediction targets. The discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasicEmotion {
    Angry = 0,
    Happy = 1,
    Neutral = 2,
    Sad = 3,
}

impl BasicEmotion {
    pub const ALL: [BasicEmotion; 4] = [
        BasicEmotion::Angry,
        BasicEmotion::Happy,
        BasicEmotion::Neutral,
        BasicEmotion::Sad,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn emotion(self) -> Emotion {
        match self {
            BasicEmotion::Angry => Emotion::Angry,
            BasicEmotion::Happy => Emotion::Happy,
            BasicEmotion::Neutral => Emotion::Neutral,
            BasicEmotion::Sad => Emotion::Sad,
        }
    }

    pub fn name(self) -> &'static str {
        self.emotion().name()
    }
}

impl fmt::Display for BasicEmotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A point in the valence-arousal plane.
///
/// Labels live on the `[1, 5]` scale; predictions are unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaPoint {
    pub valence: f64,
    pub arousal: f64,
}

impl VaPoint {
    pub const fn new(valence: f64, arousal: f64) -> Self {
        Self { valence, arousal }
    }

    /// A label point, rejected when either coordinate leaves `[1, 5]`.
    pub fn label(valence: f64, arousal: f64) -> Result<Self, EmotionSpaceError> {
        let p = Self::new(valence, arousal);
        if p.in_label_range() {
            Ok(p)
        } else {
            Err(EmotionSpaceError::OutOfRange { valence, arousal })
        }
    }

    pub fn in_label_range(&self) -> bool {
        let ok = |x: f64| (VA_MIN..=VA_MAX).contains(&x);
        ok(self.valence) && ok(self.arousal)
    }

    pub fn distance(&self, other: &VaPoint) -> f64 {
        (self.valence - other.valence).hypot(self.arousal - other.arousal)
    }
}

/// Mean label point of one basic emotion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionAnchor {
    pub emotion: BasicEmotion,
    pub point: VaPoint,
}

/// One anchor per basic emotion. Serializes as `{"angry": [v, a], ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    #[serde(with = "pair")]
    pub angry: VaPoint,
    #[serde(with = "pair")]
    pub happy: VaPoint,
    #[serde(with = "pair")]
    pub neutral: VaPoint,
    #[serde(with = "pair")]
    pub sad: VaPoint,
}

impl Anchors {
    pub fn get(&self, emotion: BasicEmotion) -> VaPoint {
        match emotion {
            BasicEmotion::Angry => self.angry,
            BasicEmotion::Happy => self.happy,
            BasicEmotion::Neutral => self.neutral,
            BasicEmotion::Sad => self.sad,
        }
    }

    pub fn anchor(&self, emotion: BasicEmotion) -> EmotionAnchor {
        EmotionAnchor {
            emotion,
            point: self.get(emotion),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = EmotionAnchor> + '_ {
        BasicEmotion::ALL.into_iter().map(|e| self.anchor(e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("anchors serialize")
    }
}

mod pair {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::VaPoint;

    pub fn serialize<S: Serializer>(p: &VaPoint, s: S) -> Result<S::Ok, S::Error> {
        [p.valence, p.arousal].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<VaPoint, D::Error> {
        let [valence, arousal] = <[f64; 2]>::deserialize(d)?;
        Ok(VaPoint { valence, arousal })
    }
}

/// One interaction unit within a composition.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    /// Position inside the owning composition.
    pub position: usize,
    /// Original categorical label.
    pub emotion: Emotion,
    pub va: VaPoint,
    /// Basic emotion assigned by relabeling.
    pub relabel: Option<BasicEmotion>,
}

impl Segment {
    pub fn new(id: impl Into<String>, emotion: Emotion, va: VaPoint) -> Self {
        Self {
            id: id.into(),
            position: 0,
            emotion,
            va,
            relabel: None,
        }
    }
}

/// Ordered window of adjacent segments; the last one is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    segments: Vec<Segment>,
}

impl Composition {
    /// Builds a composition, renumbering segment positions in order.
    pub fn new(mut segments: Vec<Segment>) -> Result<Self, EmotionSpaceError> {
        if segments.is_empty() {
            return Err(EmotionSpaceError::EmptyComposition);
        }
        for (i, s) in segments.iter_mut().enumerate() {
            s.position = i;
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn target(&self) -> &Segment {
        self.segments.last().expect("non-empty composition")
    }

    /// The relabel shared by every segment, once relabeled.
    pub fn label(&self) -> Option<BasicEmotion> {
        self.target().relabel
    }
}

/// Mean label point per basic emotion over segments whose ORIGINAL label is
/// that emotion.
pub fn compute_anchors(segments: &[Segment]) -> Result<Anchors, EmotionSpaceError> {
    let mut sums = [(0.0, 0.0, 0usize); 4];
    for s in segments {
        if let Some(b) = s.emotion.basic() {
            let slot = &mut sums[b.index()];
            slot.0 += s.va.valence;
            slot.1 += s.va.arousal;
            slot.2 += 1;
        }
    }
    let mean = |b: BasicEmotion| {
        let (v, a, n) = sums[b.index()];
        if n == 0 {
            Err(EmotionSpaceError::MissingClass(b))
        } else {
            Ok(VaPoint::new(v / n as f64, a / n as f64))
        }
    };
    Ok(Anchors {
        angry: mean(BasicEmotion::Angry)?,
        happy: mean(BasicEmotion::Happy)?,
        neutral: mean(BasicEmotion::Neutral)?,
        sad: mean(BasicEmotion::Sad)?,
    })
}

/// Assigns the target's basic emotion to every segment. Original labels
/// and VA coordinates are left untouched.
pub fn relabel_composition(c: &Composition) -> Result<Composition, EmotionSpaceError> {
    let target = c.target();
    let label = target.emotion.basic().ok_or_else(|| EmotionSpaceError::NonBasicTarget {
        id: target.id.clone(),
        emotion: target.emotion,
    })?;
    let segments = c
        .segments
        .iter()
        .map(|s| Segment {
            relabel: Some(label),
            ..s.clone()
        })
        .collect();
    Ok(Composition { segments })
}

/// Emotion-loss scale: inverse distance between the relabel anchor and the
/// segment's own label point, with the distance clamped below at `d_min`.
pub fn loss_scale_r(anchor: VaPoint, seg: VaPoint, d_min: f64) -> f64 {
    debug_assert!(d_min > 0.0, "d_min must be positive");
    1.0 / anchor.distance(&seg).max(d_min)
}

/// Change from `a` to `b` as `(Δvalence, Δarousal)`.
pub fn delta_vector(a: VaPoint, b: VaPoint) -> [f64; 2] {
    [b.valence - a.valence, b.arousal - a.arousal]
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn seg(id: &str, e: Emotion, v: f64, a: f64) -> Segment {
        Segment::new(id, e, VaPoint::new(v, a))
    }

    #[test]
    fn relabel_table_example() {
        let c = Composition::new(vec![
            seg("11", Emotion::Angry, 1.5, 4.0),
            seg("12", Emotion::Frustrated, 1.5, 4.0),
            seg("13", Emotion::Angry, 1.5, 4.5),
        ])
        .unwrap();
        let r = relabel_composition(&c).unwrap();
        for (before, after) in c.segments().iter().zip(r.segments()) {
            assert_eq!(after.relabel, Some(BasicEmotion::Angry));
            assert_eq!(after.va, before.va);
            assert_eq!(after.emotion, before.emotion);
        }
    }

    #[test]
    fn relabel_single_and_rejected() {
        let c = Composition::new(vec![seg("1", Emotion::Sad, 2.0, 2.0)]).unwrap();
        assert_eq!(relabel_composition(&c).unwrap().label(), Some(BasicEmotion::Sad));

        let c = Composition::new(vec![seg("1", Emotion::Sad, 2.0, 2.0), seg("2", Emotion::Surprise, 3.0, 4.0)]).unwrap();
        assert!(matches!(
            relabel_composition(&c),
            Err(EmotionSpaceError::NonBasicTarget { emotion: Emotion::Surprise, .. })
        ));
        assert_eq!(Composition::new(vec![]), Err(EmotionSpaceError::EmptyComposition));
    }

    #[test]
    fn anchors_are_class_means() {
        let segs = vec![
            seg("a", Emotion::Angry, 1.5, 4.0),
            seg("h1", Emotion::Happy, 4.0, 3.0),
            seg("h2", Emotion::Happy, 5.0, 4.0),
            seg("n", Emotion::Neutral, 3.0, 3.0),
            seg("s", Emotion::Sad, 2.0, 1.5),
            seg("f", Emotion::Frustrated, 1.0, 1.0),
        ];
        let anchors = compute_anchors(&segs).unwrap();
        assert_eq!(anchors.angry, VaPoint::new(1.5, 4.0));
        assert_eq!(anchors.happy, VaPoint::new(4.5, 3.5));
        assert_eq!(anchors.anchor(BasicEmotion::Sad).point, VaPoint::new(2.0, 1.5));
    }

    #[test]
    fn anchors_missing_class_named() {
        let segs = vec![seg("a", Emotion::Angry, 1.5, 4.0), seg("h", Emotion::Happy, 4.0, 3.0)];
        assert_eq!(compute_anchors(&segs), Err(EmotionSpaceError::MissingClass(BasicEmotion::Neutral)));
    }

    #[test]
    fn anchors_json_shape() {
        let anchors = Anchors {
            angry: VaPoint::new(1.5, 4.0),
            happy: VaPoint::new(4.5, 3.5),
            neutral: VaPoint::new(3.0, 3.0),
            sad: VaPoint::new(2.0, 1.5),
        };
        let v: serde_json::Value = serde_json::from_str(&anchors.to_json()).unwrap();
        assert_eq!(v["happy"], serde_json::json!([4.5, 3.5]));
        let back: Anchors = serde_json::from_str(&anchors.to_json()).unwrap();
        assert_eq!(back, anchors);
    }

    #[test]
    fn r_examples() {
        let p = VaPoint::new(2.0, 3.0);
        assert_eq!(loss_scale_r(p, p, 0.5), 2.0);
        assert!((loss_scale_r(VaPoint::new(1.5, 4.5), VaPoint::new(1.5, 4.0), 0.5) - 2.0).abs() < 1e-15);
        let far = loss_scale_r(VaPoint::new(1.0, 1.0), VaPoint::new(1.0, 3.0), 0.5);
        assert!((far - 0.5).abs() < 1e-15);
        let near = loss_scale_r(VaPoint::new(1.0, 1.0), VaPoint::new(1.0, 1.6), 0.5);
        assert!(near > far);
    }

    #[test]
    fn delta_examples() {
        let a = VaPoint::new(1.5, 4.0);
        assert_eq!(delta_vector(a, a), [0.0, 0.0]);
        assert_eq!(delta_vector(a, VaPoint::new(1.5, 4.5)), [0.0, 0.5]);
    }

    #[test]
    fn label_range_checked() {
        assert!(VaPoint::label(1.0, 5.0).is_ok());
        assert!(VaPoint::label(0.9, 3.0).is_err());
        assert!(VaPoint::label(3.0, 5.1).is_err());
    }

    #[test]
    fn emotion_parsing() {
        assert_eq!("Frustrated".parse::<Emotion>().unwrap(), Emotion::Frustrated);
        assert!("bored".parse::<Emotion>().is_err());
        assert_eq!(serde_json::to_string(&Emotion::Surprise).unwrap(), "\"surprise\"");
        for b in BasicEmotion::ALL {
            assert_eq!(BasicEmotion::from_index(b.index()), Some(b));
            assert_eq!(b.emotion().basic(), Some(b));
        }
    }

    fn emotion_strategy() -> impl Strategy<Value = Emotion> {
        (0usize..10).prop_map(|i| Emotion::ALL[i])
    }

    fn va_strategy() -> impl Strategy<Value = VaPoint> {
        (1.0..=5.0f64, 1.0..=5.0f64).prop_map(|(v, a)| VaPoint::new(v, a))
    }

    proptest! {
        #[test]
        fn prop_delta_antisymmetric(a in va_strategy(), b in va_strategy()) {
            let d1 = delta_vector(a, b);
            let d2 = delta_vector(b, a);
            prop_assert_eq!(d1, [-d2[0], -d2[1]]);
        }

        #[test]
        fn prop_r_monotone(d1 in 0.5..4.0f64, extra in 1e-6..3.0f64) {
            let o = VaPoint::new(1.0, 1.0);
            let r1 = loss_scale_r(o, VaPoint::new(1.0, 1.0 + d1), 0.5);
            let r2 = loss_scale_r(o, VaPoint::new(1.0, 1.0 + d1 + extra), 0.5);
            prop_assert!(r1 > r2);
        }

        #[test]
        fn prop_anchors_order_independent(
            points in prop::collection::vec((0usize..4, va_strategy()), 4..40),
            rot in 0usize..40,
        ) {
            let mut segs: Vec<Segment> = BasicEmotion::ALL.iter().map(|b| seg("x", b.emotion(), 3.0, 3.0)).collect();
            segs.extend(points.iter().map(|(i, p)| seg("p", BasicEmotion::ALL[*i].emotion(), p.valence, p.arousal)));
            let a = compute_anchors(&segs).unwrap();
            let mut permuted = segs.clone();
            permuted.rotate_left(rot % segs.len());
            permuted.reverse();
            let b = compute_anchors(&permuted).unwrap();
            for e in BasicEmotion::ALL {
                prop_assert!(a.get(e).distance(&b.get(e)) < 1e-12);
            }
        }

        #[test]
        fn prop_relabel_idempotent_and_va_preserving(
            labels in prop::collection::vec((emotion_strategy(), va_strategy()), 1..6),
        ) {
            let c = Composition::new(labels.iter().enumerate().map(|(i, (e, p))| seg(&i.to_string(), *e, p.valence, p.arousal)).collect()).unwrap();
            match relabel_composition(&c) {
                Ok(r) => {
                    let target = c.target().emotion.basic().unwrap();
                    prop_assert!(r.segments().iter().all(|s| s.relabel == Some(target)));
                    for (x, y) in c.segments().iter().zip(r.segments()) {
                        prop_assert_eq!(x.va, y.va);
                        prop_assert_eq!(x.emotion, y.emotion);
                    }
                    prop_assert_eq!(relabel_composition(&r).unwrap(), r);
                }
                Err(EmotionSpaceError::NonBasicTarget { .. }) => prop_assert!(c.target().emotion.basic().is_none()),
                Err(e) => prop_assert!(false, "unexpected {}", e),
            }
        }
    }
}
