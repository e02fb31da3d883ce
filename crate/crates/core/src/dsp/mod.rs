//! Signal-processing front-end.
//!
//! Framing, STFT, log-power spectra, log-mel filterbank (Fbank) features,
//! length normalization and Griffin-Lim resynthesis. Samples are kept on the
//! 16-bit integer scale as read from PCM files; no pre-emphasis or mean
//! normalization is applied anywhere.

mod archive;
mod griffin_lim;
mod wav;

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use archive::{read_archive, read_record, write_archive, write_record, ARCHIVE_MAGIC};
pub use griffin_lim::{griffin_lim, griffin_lim_with_trace, istft, GriffinLimTrace};
pub use wav::{read_wav, write_wav};

/// Analysis window applied to each frame before the FFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Hann,
    Rectangular,
}

impl Window {
    /// Symmetric window of `len` samples.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / denom;
                match self {
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub sample_rate_hz: u32,
    pub frame_length_samples: usize,
    pub frame_shift_samples: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub window: Window,
    pub log_floor: f64,
}

impl Default for FrameConfig {
    /// 8 kHz, 25 ms frames, 10 ms shift, 256-point FFT, 40 mel bins.
    fn default() -> Self {
        FrameConfig {
            sample_rate_hz: 8000,
            frame_length_samples: 200,
            frame_shift_samples: 80,
            fft_size: 256,
            n_mels: 40,
            window: Window::Hamming,
            log_floor: 1e-10,
        }
    }
}

impl FrameConfig {
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0
            || self.frame_length_samples == 0
            || self.frame_shift_samples == 0
            || self.n_mels == 0
        {
            return Err(Error::config("frame parameters must be positive"));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < self.frame_length_samples {
            return Err(Error::config(format!(
                "fft_size {} must be a power of two >= frame length {}",
                self.fft_size, self.frame_length_samples
            )));
        }
        if self.frame_shift_samples > self.frame_length_samples {
            return Err(Error::config("frame shift exceeds frame length"));
        }
        if self.n_mels > self.n_bins() {
            return Err(Error::config(format!(
                "n_mels {} exceeds {} spectral bins",
                self.n_mels,
                self.n_bins()
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }

    /// Number of complete frames in `n_samples` samples (zero if shorter than a frame).
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_length_samples {
            0
        } else {
            (n_samples - self.frame_length_samples) / self.frame_shift_samples + 1
        }
    }

    /// Sample count of a signal spanning exactly `n_frames` frames.
    pub fn n_samples(&self, n_frames: usize) -> usize {
        if n_frames == 0 {
            0
        } else {
            (n_frames - 1) * self.frame_shift_samples + self.frame_length_samples
        }
    }
}

/// Mono waveform. Samples are on the 16-bit integer scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Waveform {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Log-power spectrogram, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Array2<f64>,
    pub config: FrameConfig,
}

/// Log-mel filterbank features, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FbankSequence {
    pub frames: Array2<f64>,
    pub config: FrameConfig,
}

/// Reusable analysis state: FFT plan, window and mel filterbank for one config.
pub struct FeatureExtractor {
    config: FrameConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Array2<f64>,
}

impl FeatureExtractor {
    pub fn new(config: &FrameConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(FeatureExtractor {
            config: config.clone(),
            window: config.window.coefficients(config.frame_length_samples),
            fft: planner.plan_fft_forward(config.fft_size),
            filterbank: mel_filterbank_matrix(config)?,
        })
    }

    pub fn config(&self) -> &FrameConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    fn check(&self, waveform: &Waveform) -> Result<usize> {
        if waveform.sample_rate_hz != self.config.sample_rate_hz {
            return Err(Error::ConfigMismatch(format!(
                "waveform sampled at {} Hz, config expects {} Hz",
                waveform.sample_rate_hz, self.config.sample_rate_hz
            )));
        }
        if waveform.len() < self.config.frame_length_samples {
            return Err(Error::SignalTooShort {
                samples: waveform.len(),
                needed: self.config.frame_length_samples,
            });
        }
        Ok(self.config.n_frames(waveform.len()))
    }

    /// One-sided complex spectrum of every frame.
    pub fn stft(&self, waveform: &Waveform) -> Result<Array2<Complex64>> {
        let n_frames = self.check(waveform)?;
        let cfg = &self.config;
        let n_bins = cfg.n_bins();
        let mut out = Array2::zeros((n_frames, n_bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (t, mut row) in out.rows_mut().into_iter().enumerate() {
            let start = t * cfg.frame_shift_samples;
            let frame = &waveform.samples[start..start + cfg.frame_length_samples];
            for (slot, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex64::new(x * w, 0.0);
            }
            for slot in buf[cfg.frame_length_samples..].iter_mut() {
                *slot = Complex64::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (dst, src) in row.iter_mut().zip(&buf[..n_bins]) {
                *dst = *src;
            }
        }
        Ok(out)
    }

    fn power(&self, waveform: &Waveform) -> Result<Array2<f64>> {
        Ok(self.stft(waveform)?.mapv(|c| c.norm_sqr()))
    }

    pub fn log_power_spectrogram(&self, waveform: &Waveform) -> Result<Spectrogram> {
        let floor = self.config.log_floor;
        let frames = self.power(waveform)?.mapv(|p| p.max(floor).ln());
        Ok(Spectrogram {
            frames,
            config: self.config.clone(),
        })
    }

    pub fn fbank(&self, waveform: &Waveform) -> Result<FbankSequence> {
        let power = self.power(waveform)?;
        let floor = self.config.log_floor;
        let frames = power
            .dot(&self.filterbank.t())
            .mapv(|e| e.max(floor).ln());
        Ok(FbankSequence {
            frames,
            config: self.config.clone(),
        })
    }

    /// Fbank and log-power spectrogram from a single STFT pass.
    pub fn analyze(&self, waveform: &Waveform) -> Result<(FbankSequence, Spectrogram)> {
        let power = self.power(waveform)?;
        let floor = self.config.log_floor;
        let fbank = power
            .dot(&self.filterbank.t())
            .mapv(|e| e.max(floor).ln());
        let spec = power.mapv(|p| p.max(floor).ln());
        Ok((
            FbankSequence {
                frames: fbank,
                config: self.config.clone(),
            },
            Spectrogram {
                frames: spec,
                config: self.config.clone(),
            },
        ))
    }
}

pub fn stft(waveform: &Waveform, config: &FrameConfig) -> Result<Array2<Complex64>> {
    FeatureExtractor::new(config)?.stft(waveform)
}

/// `ln(max(|X|^2, log_floor))` per frame and bin.
pub fn log_power_spectrogram(waveform: &Waveform, config: &FrameConfig) -> Result<Spectrogram> {
    FeatureExtractor::new(config)?.log_power_spectrogram(waveform)
}

pub fn fbank(waveform: &Waveform, config: &FrameConfig) -> Result<FbankSequence> {
    FeatureExtractor::new(config)?.fbank(waveform)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Edge and center frequencies (Hz) of the triangular filters: `n_mels + 2`
/// points uniformly spaced on the mel scale from 0 Hz to Nyquist.
pub fn mel_band_edges(config: &FrameConfig) -> Vec<f64> {
    let top = hz_to_mel(config.sample_rate_hz as f64 / 2.0);
    let n = config.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(top * i as f64 / n as f64))
        .collect()
}

/// Triangular mel filterbank, `[n_mels x (fft_size/2 + 1)]`, unnormalized
/// (unit peak). Adjacent triangles share edges, so weights sum to one between
/// the first and last centers.
pub fn mel_filterbank_matrix(config: &FrameConfig) -> Result<Array2<f64>> {
    config.validate()?;
    let edges = mel_band_edges(config);
    let n_bins = config.n_bins();
    let bin_hz = config.sample_rate_hz as f64 / config.fft_size as f64;
    let mut fb = Array2::zeros((config.n_mels, n_bins));
    for m in 0..config.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
        if !fb.row(m).iter().any(|&w| w > 0.0) {
            return Err(Error::FilterbankDegenerate(format!(
                "filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin at {bin_hz:.2} Hz resolution"
            )));
        }
    }
    Ok(fb)
}

/// Scales `v` to unit Euclidean norm.
pub fn length_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v.iter().copied());
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn l2_norm(values: impl Iterator<Item = f64>) -> f64 {
    // scaled accumulation keeps huge or tiny vectors from over/underflowing
    let v: Vec<f64> = values.collect();
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}
