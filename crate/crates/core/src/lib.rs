//! Self context-aware emotion recognition.
//!
//! Segments of an interaction are grouped into compositions; a segment
//! network (small convolutional backbone, bidirectional LSTM, three heads)
//! predicts emotion, valence and arousal for each segment while carrying a
//! projection of the previous segment's final hidden state forward as an
//! extra input step. Training combines a distance-scaled emotion loss, two
//! regression losses, and a cosine loss on adjacent valence-arousal
//! changes.

pub mod autodiff;
pub mod dsp;
pub mod emotion_space;
pub mod losses;
pub mod model;
pub mod data;
pub mod trainkit;
