//! Log-Mel spectrogram frontend.
//!
//! Framing, Hann windowing, power spectrum, triangular mel filterbank and
//! natural log with a fixed floor.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("signal of {len} samples is shorter than one window of {window}")]
    SignalTooShort { len: usize, window: usize },
    #[error("invalid spectrogram config: {0}")]
    InvalidConfig(String),
    #[error("mel filter {row} covers no FFT bin; reduce n_mels or raise fft_size")]
    EmptyFilter { row: usize },
    #[error("window length must be at least 2, got {0}")]
    WindowTooShort(usize),
    #[error("frame of {len} samples exceeds fft size {fft_size}")]
    FrameTooLong { len: usize, fft_size: usize },
    #[error("{path}: {reason}")]
    Wav { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub window_size: usize,
    pub hop: usize,
    pub fft_size: usize,
    /// Per-band mean/variance normalization over frames.
    pub normalize: bool,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_mels: 256,
            window_size: 1024,
            hop: 512,
            fft_size: 2048,
            normalize: false,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |msg: String| Err(DspError::InvalidConfig(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.hop == 0 || self.hop > self.window_size {
            return bad(format!("need 0 < hop <= window_size, got hop {} window {}", self.hop, self.window_size));
        }
        if self.window_size < 2 || self.window_size > self.fft_size {
            return bad(format!(
                "need 2 <= window_size <= fft_size, got window {} fft {}",
                self.window_size, self.fft_size
            ));
        }
        if self.n_mels == 0 || self.n_mels >= self.bins() {
            return bad(format!("need 0 < n_mels < fft_size/2 + 1 = {}, got {}", self.bins(), self.n_mels));
        }
        Ok(())
    }

    /// Number of non-negative frequency bins.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.window_size).then(|| (len - self.window_size) / self.hop + 1)
    }
}

/// `[n_mels × frames]` natural-log mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Tensor,
}

impl LogMelSpectrogram {
    pub fn mels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    /// Column `t` as a vector over mel bands.
    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.mels()).map(|m| self.values.at2(m, t)).collect()
    }

    /// One row per mel band, one column per frame.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for m in 0..self.mels() {
            let row: Vec<String> = (0..self.frames()).map(|t| self.values.at2(m, t).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Splits the signal into overlapping frames; frame `t` covers
/// `[t·hop, t·hop + window_size)`.
pub fn frame_signal<'a>(signal: &'a [f64], cfg: &SpectrogramConfig) -> Result<Vec<&'a [f64]>, DspError> {
    let count = cfg.frame_count(signal.len()).ok_or(DspError::SignalTooShort {
        len: signal.len(),
        window: cfg.window_size,
    })?;
    Ok((0..count)
        .map(|t| &signal[t * cfg.hop..t * cfg.hop + cfg.window_size])
        .collect())
}

/// Symmetric Hann window `0.5·(1 − cos(2πk/(n−1)))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>, DspError> {
    if n < 2 {
        return Err(DspError::WindowTooShort(n));
    }
    let denom = (n - 1) as f64;
    Ok((0..n).map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / denom).cos())).collect())
}

/// Reusable FFT plan producing `|X_k|²` for `k = 0..=fft_size/2`.
pub struct PowerSpectrum {
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    buffer: Vec<Complex<f64>>,
}

impl PowerSpectrum {
    pub fn new(fft_size: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Self {
            fft,
            fft_size,
            buffer: vec![Complex::default(); fft_size],
        }
    }

    /// Zero-pads `frame` to the FFT size and returns the one-sided power.
    pub fn compute(&mut self, frame: &[f64]) -> Result<Vec<f64>, DspError> {
        if frame.len() > self.fft_size {
            return Err(DspError::FrameTooLong {
                len: frame.len(),
                fft_size: self.fft_size,
            });
        }
        for (i, slot) in self.buffer.iter_mut().enumerate() {
            *slot = Complex::new(frame.get(i).copied().unwrap_or(0.0), 0.0);
        }
        self.fft.process(&mut self.buffer);
        Ok(self.buffer[..self.fft_size / 2 + 1].iter().map(|c| c.norm_sqr()).collect())
    }
}

/// One-sided power spectrum of a single frame.
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>, DspError> {
    PowerSpectrum::new(fft_size).compute(frame)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Filter edge frequencies in Hz: `n_mels + 2` points uniform on the mel
/// scale from 0 to Nyquist. Filter `m` spans points `m..=m+2` and peaks at
/// point `m + 1`.
fn mel_points_hz(cfg: &SpectrogramConfig) -> Vec<f64> {
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    let n = cfg.n_mels + 2;
    (0..n).map(|i| mel_to_hz(top * i as f64 / (n - 1) as f64)).collect()
}

/// Center frequency of every mel filter in Hz.
pub fn mel_centers_hz(cfg: &SpectrogramConfig) -> Vec<f64> {
    let pts = mel_points_hz(cfg);
    pts[1..pts.len() - 1].to_vec()
}

/// Triangular filters, `[n_mels × (fft_size/2 + 1)]`, each peaking at 1.
pub fn mel_filterbank(cfg: &SpectrogramConfig) -> Result<Tensor, DspError> {
    cfg.validate()?;
    let bins = cfg.bins();
    let pts = mel_points_hz(cfg);
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut data = vec![0.0; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (pts[m], pts[m + 1], pts[m + 2]);
        let row = &mut data[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w <= 0.0) {
            return Err(DspError::EmptyFilter { row: m });
        }
    }
    Ok(Tensor::new(vec![cfg.n_mels, bins], data).expect("finite filterbank"))
}

/// Full frontend: frame, window, power spectrum, mel projection, log.
pub fn log_mel(signal: &[f64], cfg: &SpectrogramConfig) -> Result<LogMelSpectrogram, DspError> {
    let bank = mel_filterbank(cfg)?;
    let frames = frame_signal(signal, cfg)?;
    let window = hann_window(cfg.window_size)?;
    let mut spectrum = PowerSpectrum::new(cfg.fft_size);
    let (n_mels, bins, n_frames) = (cfg.n_mels, cfg.bins(), frames.len());

    let mut values = vec![0.0; n_mels * n_frames];
    let mut windowed = vec![0.0; cfg.window_size];
    for (t, frame) in frames.iter().enumerate() {
        for ((w, x), h) in windowed.iter_mut().zip(frame.iter()).zip(&window) {
            *w = x * h;
        }
        let power = spectrum.compute(&windowed)?;
        for m in 0..n_mels {
            let row = &bank.data()[m * bins..(m + 1) * bins];
            let energy: f64 = row.iter().zip(&power).map(|(a, b)| a * b).sum();
            values[m * n_frames + t] = energy.max(LOG_FLOOR).ln();
        }
    }
    if cfg.normalize {
        normalize_bands(&mut values, n_frames);
    }
    let values = Tensor::new(vec![n_mels, n_frames], values).expect("finite log-mel");
    Ok(LogMelSpectrogram { values })
}

fn normalize_bands(values: &mut [f64], n_frames: usize) {
    for band in values.chunks_mut(n_frames) {
        let n = band.len() as f64;
        let mean = band.iter().sum::<f64>() / n;
        let var = band.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        // Bands that are constant up to rounding normalize to zero.
        let flat = std <= 1e-9 * (1.0 + mean.abs());
        for v in band.iter_mut() {
            *v = if flat { 0.0 } else { (*v - mean) / std };
        }
    }
}

/// Reads a mono PCM WAV file (16-bit integer or 32-bit float) into samples
/// in `[-1, 1]` plus the file's sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32), DspError> {
    let err = |reason: String| DspError::Wav {
        path: path.display().to_string(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(err(format!("expected mono, found {} channels", spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<Vec<_>, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<_>, _>>(),
        (format, bits) => return Err(err(format!("unsupported sample format {format:?} with {bits} bits"))),
    }
    .map_err(|e| err(e.to_string()))?;
    Ok((samples, spec.sample_rate))
}
