//! Convolutional time-delay speaker network.
//!
//! The input sequence `[T x D]` is cut into overlapping `W`-frame windows.
//! Each window passes through two conv + max-pool blocks that collapse its
//! time axis to one row; the rows then form a sequence for two time-delay +
//! p-norm blocks, a linear feature layer and a softmax over training speakers.
//! The conditional factor is appended to the frequency axis, which is
//! zero-padded so that both pooling stages tile exactly. A frozen
//! standardization layer on the window tensor comes first.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{contiguous_offsets, init_network, KEY_INPUT_DIM, KEY_OUTPUT_DIM, KIND_CTDNN};
use crate::dsp::length_normalize;
use crate::error::{Error, Result};
use crate::nncore::{LayerSpec, NetworkCheckpoint, Tensor, KEY_MODEL_KIND};

/// Index of the feature (embedding) layer.
pub const CTDNN_FEATURE_LAYER: usize = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtdnnConfig {
    pub fbank_dim: usize,
    /// Width of the conditional factor appended to each frame (0 for IDF).
    pub cond_dim: usize,
    pub conv1_channels: usize,
    /// `[time, freq]`
    pub conv1_kernel: [usize; 2],
    pub pool1: [usize; 2],
    pub conv2_channels: usize,
    pub conv2_kernel: [usize; 2],
    pub pool2: [usize; 2],
    pub td1_offsets: Vec<i32>,
    pub td2_offsets: Vec<i32>,
    pub td_units: usize,
    pub pnorm_group: usize,
    pub feature_dim: usize,
    pub n_speakers: usize,
    pub effective_context_frames: usize,
}

impl Default for CtdnnConfig {
    fn default() -> Self {
        CtdnnConfig {
            fbank_dim: 40,
            cond_dim: 0,
            conv1_channels: 8,
            conv1_kernel: [5, 5],
            pool1: [2, 2],
            conv2_channels: 16,
            conv2_kernel: [3, 3],
            pool2: [1, 1],
            td1_offsets: vec![-4, -2, 0, 2, 4],
            td2_offsets: vec![-1, 0, 1],
            td_units: 128,
            pnorm_group: 2,
            feature_dim: 40,
            n_speakers: 16,
            effective_context_frames: 20,
        }
    }
}

/// Derived shape facts of a CT-DNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtdnnGeometry {
    pub input_dim: usize,
    /// Frames seen by the convolutional block per window.
    pub window_frames: usize,
    /// Frequency axis after zero-padding.
    pub padded_dim: usize,
    pub cn_out_dim: usize,
    /// Windows consumed before and after the current one by the TD blocks.
    pub left_reach: usize,
    pub right_reach: usize,
}

impl CtdnnGeometry {
    pub fn context_frames(&self) -> usize {
        self.window_frames + self.left_reach + self.right_reach
    }

    /// Output frames for a `t`-frame input.
    pub fn output_frames(&self, t: usize) -> usize {
        (t + 1).saturating_sub(self.context_frames())
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint) -> Result<Self> {
        ckpt.expect_kind(KIND_CTDNN)?;
        Ok(CtdnnGeometry {
            input_dim: ckpt.meta_parse(KEY_INPUT_DIM)?,
            window_frames: ckpt.meta_parse("window_frames")?,
            padded_dim: ckpt.meta_parse("padded_dim")?,
            cn_out_dim: ckpt.meta_parse("cn_out_dim")?,
            left_reach: ckpt.meta_parse("left_reach")?,
            right_reach: ckpt.meta_parse("right_reach")?,
        })
    }
}

fn pooled(len: usize, kernel: usize, pool: usize) -> Option<usize> {
    let conv = len.checked_sub(kernel)? + 1;
    (conv % pool == 0).then_some(conv / pool)
}

impl CtdnnConfig {
    pub fn paper_scale(self) -> Self {
        CtdnnConfig {
            conv1_channels: 32,
            conv2_channels: 64,
            td_units: 512,
            ..self
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fbank_dim + self.cond_dim
    }

    pub fn geometry(&self) -> Result<CtdnnGeometry> {
        let positive = [
            self.fbank_dim,
            self.conv1_channels,
            self.conv2_channels,
            self.td_units,
            self.pnorm_group,
            self.feature_dim,
        ]
        .iter()
        .chain(&self.conv1_kernel)
        .chain(&self.conv2_kernel)
        .chain(&self.pool1)
        .chain(&self.pool2)
        .all(|&v| v > 0);
        if !positive {
            return Err(Error::config("CT-DNN sizes must be positive"));
        }
        if self.n_speakers < 2 {
            return Err(Error::config("CT-DNN needs at least 2 training speakers"));
        }
        if self.td_units % self.pnorm_group != 0 {
            return Err(Error::config("td_units must be divisible by pnorm_group"));
        }
        contiguous_offsets(&self.td1_offsets)?;
        contiguous_offsets(&self.td2_offsets)?;

        // time axis: the smallest window whose conv stack collapses to one row
        let [k1h, k1w] = self.conv1_kernel;
        let [k2h, k2w] = self.conv2_kernel;
        let [p1h, p1w] = self.pool1;
        let [p2h, p2w] = self.pool2;
        let window_frames = (p2h + k2h - 1) * p1h + k1h - 1;

        let input_dim = self.input_dim();
        let freq_out = |f: usize| pooled(f, k1w, p1w).and_then(|f1| pooled(f1, k2w, p2w));
        let padded_dim = (input_dim..input_dim + 4 * p1w * p2w + k1w + k2w)
            .find(|&f| matches!(freq_out(f), Some(n) if n > 0))
            .ok_or_else(|| Error::Geometry(format!("no frequency padding tiles the pooling for {input_dim} dims")))?;
        let freq = freq_out(padded_dim).expect("checked above");

        let left = -(self.td1_offsets[0] + self.td2_offsets[0]);
        let right = self.td1_offsets[self.td1_offsets.len() - 1] + self.td2_offsets[self.td2_offsets.len() - 1];
        if left < 0 || right < 0 {
            return Err(Error::Geometry("time-delay offsets must span the current frame".into()));
        }
        let (left_reach, right_reach) = (left as usize, right as usize);

        let geom = CtdnnGeometry {
            input_dim,
            window_frames,
            padded_dim,
            cn_out_dim: self.conv2_channels * freq,
            left_reach,
            right_reach,
        };
        if geom.context_frames() != self.effective_context_frames {
            return Err(Error::Geometry(format!(
                "layers see {} frames per output, configured context is {}",
                geom.context_frames(),
                self.effective_context_frames
            )));
        }
        Ok(geom)
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let g = self.geometry()?;
        let pooled_units = self.td_units / self.pnorm_group;
        Ok(vec![
            LayerSpec::Standardize {
                dim: g.window_frames * g.padded_dim,
            },
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: self.conv1_channels,
                kernel_h: self.conv1_kernel[0],
                kernel_w: self.conv1_kernel[1],
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d {
                pool_h: self.pool1[0],
                pool_w: self.pool1[1],
            },
            LayerSpec::Conv2d {
                in_channels: self.conv1_channels,
                out_channels: self.conv2_channels,
                kernel_h: self.conv2_kernel[0],
                kernel_w: self.conv2_kernel[1],
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d {
                pool_h: self.pool2[0],
                pool_w: self.pool2[1],
            },
            LayerSpec::TimeDelay {
                offsets: self.td1_offsets.clone(),
                in_dim: g.cn_out_dim,
            },
            LayerSpec::Dense {
                in_dim: g.cn_out_dim * self.td1_offsets.len(),
                out_dim: self.td_units,
            },
            LayerSpec::PNorm {
                group_size: self.pnorm_group,
                p: 2.0,
            },
            LayerSpec::TimeDelay {
                offsets: self.td2_offsets.clone(),
                in_dim: pooled_units,
            },
            LayerSpec::Dense {
                in_dim: pooled_units * self.td2_offsets.len(),
                out_dim: self.td_units,
            },
            LayerSpec::PNorm {
                group_size: self.pnorm_group,
                p: 2.0,
            },
            LayerSpec::Dense {
                in_dim: pooled_units,
                out_dim: self.feature_dim,
            },
            LayerSpec::Dense {
                in_dim: self.feature_dim,
                out_dim: self.n_speakers,
            },
            LayerSpec::Softmax,
        ])
    }
}

pub fn build_ctdnn(cfg: &CtdnnConfig, seed: u64) -> Result<NetworkCheckpoint> {
    let g = cfg.geometry()?;
    let net = init_network(cfg.layer_specs()?, seed)?;
    Ok(NetworkCheckpoint::new(net)
        .with_meta(KEY_MODEL_KIND, KIND_CTDNN)
        .with_meta(KEY_INPUT_DIM, g.input_dim)
        .with_meta(KEY_OUTPUT_DIM, cfg.n_speakers)
        .with_meta("fbank_dim", cfg.fbank_dim)
        .with_meta("cond_dim", cfg.cond_dim)
        .with_meta("feature_dim", cfg.feature_dim)
        .with_meta("window_frames", g.window_frames)
        .with_meta("padded_dim", g.padded_dim)
        .with_meta("cn_out_dim", g.cn_out_dim)
        .with_meta("left_reach", g.left_reach)
        .with_meta("right_reach", g.right_reach))
}

/// Overlapping windows `[T - W + 1, 1, W, padded_dim]` over a frame sequence.
pub fn ctdnn_windows(input: &Array2<f64>, geom: &CtdnnGeometry) -> Result<Tensor> {
    let (t, d) = input.dim();
    if d != geom.input_dim {
        return Err(Error::config(format!(
            "CT-DNN expects {}-dim frames, got {d}",
            geom.input_dim
        )));
    }
    let w = geom.window_frames;
    if t < w {
        return Err(Error::UtteranceTooShort { frames: t, needed: w });
    }
    let n = t - w + 1;
    let fp = geom.padded_dim;
    let mut values = vec![0.0; n * w * fp];
    for (i, window) in values.chunks_exact_mut(w * fp).enumerate() {
        for (r, row) in window.chunks_exact_mut(fp).enumerate() {
            for (dst, src) in row.iter_mut().zip(input.row(i + r)) {
                *dst = *src;
            }
        }
    }
    Tensor::new(vec![n, 1, w, fp], values)
}

/// Length-normalized feature-layer activations `[T - context + 1 x feature_dim]`.
pub fn speaker_features(ckpt: &NetworkCheckpoint, input: &Array2<f64>) -> Result<Array2<f64>> {
    let geom = CtdnnGeometry::from_checkpoint(ckpt)?;
    let needed = geom.context_frames();
    if input.nrows() < needed {
        return Err(Error::UtteranceTooShort {
            frames: input.nrows(),
            needed,
        });
    }
    let windows = ctdnn_windows(input, &geom)?;
    let feats = ckpt.network.forward_to(&windows, 0..CTDNN_FEATURE_LAYER + 1)?;
    let n_out = geom.output_frames(input.nrows());
    let dim = feats.row_len();
    let mut out = Array2::zeros((n_out, dim));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let normed = length_normalize(feats.row(geom.left_reach + i))?;
        row.iter_mut().zip(normed).for_each(|(d, v)| *d = v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_sees_twenty_frames() {
        let g = CtdnnConfig::default().geometry().unwrap();
        assert_eq!(g.window_frames, 10);
        assert_eq!(g.context_frames(), 20);
        assert_eq!(g.padded_dim, 40);
        assert_eq!(g.output_frames(20), 1);
    }

    #[test]
    fn conditional_dims_are_padded_to_tile() {
        let cfg = CtdnnConfig {
            cond_dim: 21,
            ..CtdnnConfig::default()
        };
        let g = cfg.geometry().unwrap();
        assert_eq!(g.input_dim, 61);
        assert_eq!(g.padded_dim, 62);
        assert_eq!(g.cn_out_dim, 16 * 27);
    }

    #[test]
    fn inconsistent_context_is_a_geometry_error() {
        let cfg = CtdnnConfig {
            td2_offsets: vec![-2, 0, 2],
            ..CtdnnConfig::default()
        };
        assert!(matches!(cfg.geometry(), Err(Error::Geometry(_))));
    }

    #[test]
    fn parameter_count() {
        let cfg = CtdnnConfig::default();
        let ck = build_ctdnn(&cfg, 0).unwrap();
        let conv = 2 * 10 * 40 + (8 * 25 + 8) + (16 * 8 * 9 + 16);
        let cn_out = 16 * 16; // 40 -> 36 -> 18 -> 16
        let td = (cn_out * 5 * 128 + 128) + (64 * 3 * 128 + 128);
        let head = (64 * 40 + 40) + (40 * 16 + 16);
        assert_eq!(ck.network.param_count(), conv + td + head);
    }

    #[test]
    fn features_are_unit_norm_and_shift_invariant_on_constant_input() {
        let ck = build_ctdnn(&CtdnnConfig::default(), 4).unwrap();
        let frame: Vec<f64> = (0..40).map(|d| (d as f64 * 0.37).sin() * 3.0).collect();
        let x = Array2::from_shape_fn((26, 40), |(_, d)| frame[d]);
        let s = speaker_features(&ck, &x).unwrap();
        assert_eq!(s.nrows(), 7);
        for row in s.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
            assert_eq!(row, s.row(0));
        }
        let short = Array2::zeros((19, 40));
        assert!(matches!(
            speaker_features(&ck, &short),
            Err(Error::UtteranceTooShort { frames: 19, needed: 20 })
        ));
    }
}
