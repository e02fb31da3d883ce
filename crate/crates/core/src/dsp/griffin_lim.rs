use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use super::{FeatureExtractor, FrameConfig, Spectrogram, Waveform};
use crate::error::{Error, Result};

/// Spectral convergence after every iteration of a Griffin-Lim run.
#[derive(Debug, Clone)]
pub struct GriffinLimTrace {
    pub waveform: Waveform,
    pub spectral_convergence: Vec<f64>,
}

/// Least-squares inverse STFT (weighted overlap-add) of a one-sided spectrum.
pub fn istft(spectrum: &Array2<Complex64>, config: &FrameConfig) -> Result<Waveform> {
    config.validate()?;
    let (n_frames, n_bins) = spectrum.dim();
    if n_bins != config.n_bins() {
        return Err(Error::dim(format!(
            "spectrum has {n_bins} bins, config expects {}",
            config.n_bins()
        )));
    }
    let n = config.fft_size;
    let len = config.frame_length_samples;
    let shift = config.frame_shift_samples;
    let window = config.window.coefficients(len);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let total = config.n_samples(n_frames);
    let mut signal = vec![0.0; total];
    let mut weight = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (t, row) in spectrum.rows().into_iter().enumerate() {
        for k in 0..n {
            buf[k] = if k < n_bins {
                row[k]
            } else {
                row[n - k].conj()
            };
        }
        // bins 0 and n/2 of a real signal's spectrum are real
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        ifft.process(&mut buf);
        let start = t * shift;
        for i in 0..len {
            signal[start + i] += window[i] * buf[i].re / n as f64;
            weight[start + i] += window[i] * window[i];
        }
    }
    for (s, w) in signal.iter_mut().zip(&weight) {
        if *w > 1e-12 {
            *s /= w;
        }
    }
    Ok(Waveform::new(signal, config.sample_rate_hz))
}

fn spectral_convergence(target: &Array2<f64>, estimate: &Array2<Complex64>, n_fft: usize) -> f64 {
    // Interior bins count twice to measure the full Hermitian spectrum.
    let last = target.ncols() - 1;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((t, k), m) in target.indexed_iter() {
        let weight = if k == 0 || (k == last && n_fft % 2 == 0) {
            1.0
        } else {
            2.0
        };
        let d = estimate[[t, k]].norm() - m;
        num += weight * d * d;
        den += weight * m * m;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Phase retrieval from the magnitude `exp(log_power / 2)` of `spec`.
pub fn griffin_lim(spec: &Spectrogram, iterations: usize, seed: u64) -> Result<Waveform> {
    griffin_lim_with_trace(spec, iterations, seed).map(|t| t.waveform)
}

pub fn griffin_lim_with_trace(
    spec: &Spectrogram,
    iterations: usize,
    seed: u64,
) -> Result<GriffinLimTrace> {
    if iterations == 0 {
        return Err(Error::NoIterations);
    }
    let config = &spec.config;
    let extractor = FeatureExtractor::new(config)?;
    if spec.frames.ncols() != config.n_bins() {
        return Err(Error::dim(format!(
            "spectrogram has {} bins, config expects {}",
            spec.frames.ncols(),
            config.n_bins()
        )));
    }
    let magnitude = spec.frames.mapv(|lp| (0.5 * lp).exp());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimate = magnitude.mapv(|m| {
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        Complex64::from_polar(m, phase)
    });
    let mut trace = Vec::with_capacity(iterations);
    let mut waveform = Waveform::new(Vec::new(), config.sample_rate_hz);
    for _ in 0..iterations {
        waveform = istft(&estimate, config)?;
        let rebuilt = extractor.stft(&waveform)?;
        trace.push(spectral_convergence(&magnitude, &rebuilt, config.fft_size));
        estimate = Array2::from_shape_fn(magnitude.dim(), |(t, k)| {
            let c = rebuilt[[t, k]];
            let phase = if c.norm() > 0.0 { c.arg() } else { 0.0 };
            Complex64::from_polar(magnitude[[t, k]], phase)
        });
    }
    Ok(GriffinLimTrace {
        waveform,
        spectral_convergence: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::log_power_spectrogram;

    fn sine(bin: f64, cfg: &FrameConfig, n: usize) -> Waveform {
        let f = bin * cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
        let samples = (0..n)
            .map(|i| 3000.0 * (std::f64::consts::TAU * f * i as f64 / cfg.sample_rate_hz as f64).sin())
            .collect();
        Waveform::new(samples, cfg.sample_rate_hz)
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = FrameConfig::default();
        let spec = log_power_spectrogram(&sine(10.0, &cfg, 1000), &cfg).unwrap();
        assert!(matches!(griffin_lim(&spec, 0, 1), Err(Error::NoIterations)));
    }

    #[test]
    fn istft_inverts_stft() {
        let cfg = FrameConfig::default();
        let wav = sine(7.3, &cfg, cfg.n_samples(20));
        let ex = FeatureExtractor::new(&cfg).unwrap();
        let back = istft(&ex.stft(&wav).unwrap(), &cfg).unwrap();
        assert_eq!(back.len(), wav.len());
        for (a, b) in wav.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn convergence_never_increases() {
        let cfg = FrameConfig::default();
        let wav = sine(12.0, &cfg, 2000);
        let spec = log_power_spectrogram(&wav, &cfg).unwrap();
        let trace = griffin_lim_with_trace(&spec, 60, 9).unwrap();
        for w in trace.spectral_convergence.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
        assert!(trace.spectral_convergence[49] <= trace.spectral_convergence[0]);
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = FrameConfig::default();
        let spec = log_power_spectrogram(&sine(5.0, &cfg, 1200), &cfg).unwrap();
        let a = griffin_lim(&spec, 5, 42).unwrap();
        let b = griffin_lim(&spec, 5, 42).unwrap();
        assert_eq!(a, b);
    }
}
