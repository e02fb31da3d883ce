//! Source-filter rendering of one utterance.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{PhoneSegment, SynthSpec};
use crate::dsp::FrameConfig;
use crate::seeds::rng_for;

/// Output scale bringing typical voiced speech to roughly 1500 RMS.
const OUTPUT_GAIN: f64 = 10000.0;
const FORMANT_BANDWIDTHS_HZ: [f64; 3] = [90.0, 110.0, 170.0];
const FORMANT_AMPLITUDES: [f64; 3] = [1.0, 0.6, 0.35];
const SMOOTHING_SECONDS: f64 = 0.008;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVoice {
    pub base_f0_hz: f64,
    /// Pole of the one-pole glottal low-pass; larger is darker.
    pub tilt: f64,
    /// Vocal-tract length factor applied to the phone formants.
    pub formant_scale: f64,
    pub f3_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhoneVoice {
    pub voiced: bool,
    pub f1_hz: f64,
    pub f2_hz: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionVoice {
    pub f0_scale: f64,
    pub energy: f64,
    pub wobble_depth: f64,
    pub wobble_rate_hz: f64,
}

/// All latent voice parameters of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Voices {
    pub speakers: Vec<SpeakerVoice>,
    pub phones: Vec<PhoneVoice>,
    pub emotions: Vec<EmotionVoice>,
}

impl Voices {
    pub fn draw(spec: &SynthSpec) -> Self {
        let mut rng = rng_for(spec.seed, "speakers");
        let speakers = (0..spec.n_speakers + spec.n_sre_eval_speakers)
            .map(|_| SpeakerVoice {
                base_f0_hz: rng.gen_range(85.0..230.0),
                tilt: rng.gen_range(0.5..0.95),
                formant_scale: rng.gen_range(0.85..1.15),
                f3_hz: rng.gen_range(2300.0..3300.0),
            })
            .collect();

        let mut rng = rng_for(spec.seed, "phones");
        let mut phones = vec![PhoneVoice {
            voiced: false,
            f1_hz: 500.0,
            f2_hz: 1500.0,
            gain: 0.0,
        }];
        for _ in 1..spec.n_phones {
            let voiced = rng.gen_bool(0.8);
            phones.push(if voiced {
                PhoneVoice {
                    voiced,
                    f1_hz: rng.gen_range(250.0..850.0),
                    f2_hz: rng.gen_range(850.0..2400.0),
                    gain: rng.gen_range(0.6..1.4),
                }
            } else {
                PhoneVoice {
                    voiced,
                    f1_hz: rng.gen_range(1500.0..2500.0),
                    f2_hz: rng.gen_range(2800.0..3600.0),
                    gain: rng.gen_range(0.6..1.4),
                }
            });
        }

        let k = spec.n_emotions;
        let step = |i: usize| i as f64 / (k - 1) as f64;
        let emotions = (0..k)
            .map(|e| EmotionVoice {
                f0_scale: 0.88 + 0.30 * step(e),
                // energy ranks are a permutation so loudness and pitch disagree
                energy: 0.7 + 0.75 * step((2 * k - 1 - e + k / 2) % k),
                wobble_depth: 0.01 + 0.03 * step((e + 1) % k),
                wobble_rate_hz: 3.0 + 3.0 * step((e + 2) % k),
            })
            .collect();
        Voices {
            speakers,
            phones,
            emotions,
        }
    }
}

/// Silence, `n` random phones, silence; each segment a random duration.
pub(crate) fn draw_segments<R: Rng>(spec: &SynthSpec, rng: &mut R) -> Vec<PhoneSegment> {
    let [pmin, pmax] = spec.phones_per_utterance;
    let [dmin, dmax] = spec.phone_duration_frames;
    let n = rng.gen_range(pmin..=pmax);
    let mut phones = vec![0];
    for _ in 0..n {
        let prev = *phones.last().expect("non-empty");
        let mut p = rng.gen_range(1..spec.n_phones);
        if p == prev && spec.n_phones > 2 {
            p = 1 + p % (spec.n_phones - 1);
        }
        phones.push(p);
    }
    phones.push(0);
    let mut at = 0;
    phones
        .into_iter()
        .map(|phone| {
            let len = rng.gen_range(dmin..=dmax);
            let seg = PhoneSegment {
                phone,
                start_frame: at,
                end_frame: at + len,
            };
            at += len;
            seg
        })
        .collect()
}

/// Two-pole resonator normalised to roughly unit gain at its peak, so level
/// does not depend on where the formants sit.
#[derive(Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, f_hz: f64, bw_hz: f64, sr: f64) -> f64 {
        let r = (-PI * bw_hz / sr).exp();
        let theta = TAU * f_hz / sr;
        let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
        let y = gain * x + 2.0 * r * theta.cos() * self.y1 - r * r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders 16-bit samples spanning exactly the frames of `segments` under
/// `frame`, so frame `t` of the analysis carries the label of frame `t`.
pub fn synthesize_utterance<R: Rng>(
    voices: &Voices,
    speaker: usize,
    emotion: usize,
    segments: &[PhoneSegment],
    frame: &FrameConfig,
    noise_std: f64,
    rng: &mut R,
) -> Vec<i16> {
    let spk = &voices.speakers[speaker];
    let emo = &voices.emotions[emotion];
    let labels: Vec<usize> = segments
        .iter()
        .flat_map(|s| std::iter::repeat(s.phone).take(s.end_frame - s.start_frame))
        .collect();
    let n_frames = labels.len();
    let n_samples = frame.n_samples(n_frames);
    let sr = frame.sample_rate_hz as f64;
    let shift = frame.frame_shift_samples as i64;
    let centre = (frame.frame_length_samples as i64 - shift) / 2;
    let alpha = 1.0 - (-1.0 / (SMOOTHING_SECONDS * sr)).exp();

    let first = &voices.phones[labels[0]];
    let mut f1 = first.f1_hz * spk.formant_scale;
    let mut f2 = first.f2_hz * spk.formant_scale;
    let mut gain = first.gain;
    let mut voicing = if first.voiced { 1.0 } else { 0.0 };
    let mut phase = 0.0;
    let mut jitter = 1.0;
    let mut glottal = 0.0;
    let wobble_phase: f64 = rng.gen_range(0.0..TAU);
    let mut resonators: [Resonator; 3] = Default::default();

    let mut out = Vec::with_capacity(n_samples);
    for n in 0..n_samples {
        let t = ((n as i64 - centre).div_euclid(shift)).clamp(0, n_frames as i64 - 1) as usize;
        let ph = &voices.phones[labels[t]];
        f1 += alpha * (ph.f1_hz * spk.formant_scale - f1);
        f2 += alpha * (ph.f2_hz * spk.formant_scale - f2);
        gain += alpha * (ph.gain - gain);
        voicing += alpha * (if ph.voiced { 1.0 } else { 0.0 } - voicing);

        let time = n as f64 / sr;
        let declination = 1.0 - 0.1 * n as f64 / n_samples as f64;
        let f0 = spk.base_f0_hz
            * emo.f0_scale
            * declination
            * (1.0 + emo.wobble_depth * (TAU * emo.wobble_rate_hz * time + wobble_phase).sin());
        phase += f0 * jitter / sr;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            jitter = 1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal);
            (sr / f0).sqrt()
        } else {
            0.0
        };
        glottal = (1.0 - spk.tilt) * pulse + spk.tilt * glottal;
        let hiss: f64 = rng.sample(StandardNormal);
        let source = voicing * glottal + (1.0 - voicing) * 0.5 * hiss;

        let y = [f1, f2, spk.f3_hz]
            .iter()
            .zip(&mut resonators)
            .zip(FORMANT_BANDWIDTHS_HZ.iter().zip(FORMANT_AMPLITUDES))
            .map(|((&f, res), (&bw, amp))| amp * res.step(source, f, bw, sr))
            .sum::<f64>();

        let noise: f64 = rng.sample(StandardNormal);
        let v = OUTPUT_GAIN * gain * emo.energy * y + noise_std * noise;
        out.push(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emotion_tables_are_permutations() {
        for k in 2..9 {
            let spec = SynthSpec {
                n_emotions: k,
                ..SynthSpec::default()
            };
            let v = Voices::draw(&spec);
            let mut energies: Vec<f64> = v.emotions.iter().map(|e| e.energy).collect();
            energies.sort_by(f64::total_cmp);
            energies.dedup();
            assert_eq!(energies.len(), k);
        }
    }

    #[test]
    fn length_matches_frames() {
        let spec = SynthSpec::default();
        let voices = Voices::draw(&spec);
        let mut rng = rng_for(1, "x");
        let segs = draw_segments(&spec, &mut rng);
        let frame = FrameConfig::default();
        let wav = synthesize_utterance(&voices, 0, 0, &segs, &frame, 5.0, &mut rng);
        assert_eq!(frame.n_frames(wav.len()), segs.last().unwrap().end_frame);
        assert_eq!(segs[0].phone, 0);
        assert_eq!(segs.last().unwrap().phone, 0);
    }
}
