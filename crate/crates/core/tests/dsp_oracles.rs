mod common;

use cdf_core::dsp::{
    fbank, griffin_lim, length_normalize, log_power_spectrogram, mel_band_edges, mel_filterbank_matrix, stft,
    FeatureExtractor, FrameConfig, Waveform, Window,
};
use common::{hamming, naive_dft, random_signal};
use proptest::prelude::*;

fn full_frame_config(n: usize) -> FrameConfig {
    FrameConfig {
        frame_length_samples: n,
        frame_shift_samples: n,
        fft_size: n,
        n_mels: 8,
        window: Window::Rectangular,
        ..FrameConfig::default()
    }
}

#[test]
fn bin_centred_sine_matches_naive_dft() {
    let n = 256;
    let cfg = full_frame_config(n);
    let x: Vec<f64> = (0..n)
        .map(|i| 1000.0 * (std::f64::consts::TAU * 3.0 * i as f64 / n as f64).sin())
        .collect();
    let spec = stft(&Waveform::new(x.clone(), 8000), &cfg).unwrap();
    let oracle = naive_dft(&x, n);
    let mut worst: f64 = 0.0;
    for (k, o) in oracle.iter().enumerate() {
        worst = worst.max((spec[[0, k]] - o).norm());
    }
    assert!(worst < 1e-9, "max deviation {worst}");
    let peak = (0..=n / 2)
        .max_by(|&a, &b| spec[[0, a]].norm().partial_cmp(&spec[[0, b]].norm()).unwrap())
        .unwrap();
    assert_eq!(peak, 3);
}

#[test]
fn windowed_zero_padded_frames_match_naive_dft() {
    let cfg = FrameConfig::default();
    let x = random_signal(1000, 3000.0, 11);
    let spec = stft(&Waveform::new(x.clone(), 8000), &cfg).unwrap();
    let w = hamming(cfg.frame_length_samples);
    for t in [0usize, 3, spec.nrows() - 1] {
        let start = t * cfg.frame_shift_samples;
        let frame: Vec<f64> = (0..cfg.frame_length_samples).map(|i| x[start + i] * w[i]).collect();
        let oracle = naive_dft(&frame, cfg.fft_size);
        for (k, o) in oracle.iter().enumerate() {
            // relative to the frame scale: values are O(1e5)
            assert!((spec[[t, k]] - o).norm() < 1e-9 * 3000.0 * 200.0);
        }
    }
}

#[test]
fn parseval_per_frame() {
    let cfg = FrameConfig::default();
    let x = random_signal(8000, 5000.0, 5);
    let spec = stft(&Waveform::new(x.clone(), 8000), &cfg).unwrap();
    let w = hamming(cfg.frame_length_samples);
    let n = cfg.fft_size;
    for t in 0..spec.nrows() {
        let start = t * cfg.frame_shift_samples;
        let time_energy: f64 = (0..cfg.frame_length_samples).map(|i| (x[start + i] * w[i]).powi(2)).sum();
        let mut spectral = 0.0;
        for k in 0..=n / 2 {
            let weight = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            spectral += weight * spec[[t, k]].norm_sqr();
        }
        let rel = (time_energy - spectral / n as f64).abs() / time_energy;
        assert!(rel < 1e-9, "frame {t}: {rel}");
    }
}

#[test]
fn filterbank_overlap_sum_is_one_between_centres() {
    for n_mels in [10, 23, 40] {
        let cfg = FrameConfig {
            n_mels,
            ..FrameConfig::default()
        };
        let fb = mel_filterbank_matrix(&cfg).unwrap();
        let edges = mel_band_edges(&cfg);
        let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
        let (first, last) = (edges[1], edges[n_mels]);
        let mut interior = 0;
        for k in 0..cfg.n_bins() {
            let f = k as f64 * bin_hz;
            if f >= first && f <= last {
                let sum: f64 = (0..n_mels).map(|m| fb[[m, k]]).sum();
                assert!((sum - 1.0).abs() < 1e-9, "bin {k}: {sum}");
                interior += 1;
            }
        }
        assert!(interior > 50);
    }
}

#[test]
fn cached_filterbank_is_bit_identical() {
    let cfg = FrameConfig::default();
    let ex = FeatureExtractor::new(&cfg).unwrap();
    assert_eq!(ex.filterbank(), &mel_filterbank_matrix(&cfg).unwrap());
}

#[test]
fn white_noise_fbank_is_finite_and_above_floor() {
    let cfg = FrameConfig::default();
    let x = random_signal(4000, 2000.0, 99);
    let wav = Waveform::new(x, 8000);
    let fb = fbank(&wav, &cfg).unwrap();
    let floor = cfg.log_floor.ln();
    assert!(fb.frames.iter().all(|v| v.is_finite() && *v > floor));
    assert_eq!(fb, fbank(&wav, &cfg).unwrap());
}

#[test]
fn griffin_lim_keeps_the_dominant_bin() {
    let cfg = FrameConfig::default();
    let n = cfg.n_samples(40);
    let freq = 20.0 * cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
    let x: Vec<f64> = (0..n)
        .map(|i| 2000.0 * (std::f64::consts::TAU * freq * i as f64 / 8000.0).sin())
        .collect();
    let spec = log_power_spectrogram(&Waveform::new(x.clone(), 8000), &cfg).unwrap();
    let y = griffin_lim(&spec, 100, 3).unwrap();
    assert_eq!(y.len(), x.len());
    let dominant = |s: &[f64]| {
        let d = naive_dft(s, 2048.max(s.len()).next_power_of_two());
        (0..d.len()).max_by(|&a, &b| d[a].norm().partial_cmp(&d[b].norm()).unwrap()).unwrap()
    };
    assert_eq!(dominant(&y.samples), dominant(&x));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn frame_count_follows_formula(len in 200usize..3000) {
        let cfg = FrameConfig::default();
        let wav = Waveform::new(random_signal(len, 100.0, len as u64), 8000);
        let expected = (len - 200) / 80 + 1;
        let (fb, spec) = FeatureExtractor::new(&cfg).unwrap().analyze(&wav).unwrap();
        prop_assert_eq!(fb.frames.nrows(), expected);
        prop_assert_eq!(spec.frames.nrows(), expected);
        prop_assert_eq!(stft(&wav, &cfg).unwrap().nrows(), expected);
    }

    #[test]
    fn log_power_shifts_by_two_ln_c(c in 0.05f64..20.0, seed in 0u64..1000) {
        let cfg = FrameConfig::default();
        let x = random_signal(600, 1000.0, seed);
        let a = log_power_spectrogram(&Waveform::new(x.clone(), 8000), &cfg).unwrap();
        let b = log_power_spectrogram(&Waveform::new(x.iter().map(|v| v * c).collect(), 8000), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        for (p, q) in a.frames.iter().zip(b.frames.iter()) {
            if *p > floor && *q > floor {
                prop_assert!((q - p - 2.0 * c.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalization_is_scale_invariant(v in prop::collection::vec(-100.0f64..100.0, 1..40), c in 1e-3f64..1e3) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
        let a = length_normalize(&v).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let b = length_normalize(&scaled).unwrap();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
