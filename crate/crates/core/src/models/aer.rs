use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_input, contiguous_offsets, init_network, tensor_of, KEY_INPUT_DIM, KEY_OUTPUT_DIM, KIND_AER};
use crate::error::{Error, Result};
use crate::nncore::{LayerSpec, NetworkCheckpoint, KEY_MODEL_KIND};

/// Index of the last p-norm layer, whose output is the emotion factor.
pub const AER_FACTOR_LAYER: usize = 13;

/// Emotion classifier over `[fbank; q; s]` frames. A zero conditional width
/// means the factor is not fed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AerNetConfig {
    pub fbank_dim: usize,
    pub ling_dim: usize,
    pub spk_dim: usize,
    pub n_emotions: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub pnorm_out: usize,
    pub context_offsets: Vec<i32>,
}

impl Default for AerNetConfig {
    fn default() -> Self {
        AerNetConfig {
            fbank_dim: 40,
            ling_dim: 0,
            spk_dim: 0,
            n_emotions: 4,
            hidden_layers: 6,
            hidden_units: 200,
            pnorm_out: 40,
            context_offsets: (-2..=2).collect(),
        }
    }
}

impl AerNetConfig {
    pub fn input_dim(&self) -> usize {
        self.fbank_dim + self.ling_dim + self.spk_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_emotions < 2 {
            return Err(Error::config("n_emotions must be at least 2"));
        }
        if self.fbank_dim == 0 || self.pnorm_out == 0 || self.hidden_units == 0 {
            return Err(Error::config("AER dimensions must be positive"));
        }
        if self.hidden_layers != (AER_FACTOR_LAYER - 1) / 2 {
            return Err(Error::config(format!(
                "AER net has {} hidden layers",
                (AER_FACTOR_LAYER - 1) / 2
            )));
        }
        if self.hidden_units % self.pnorm_out != 0 {
            return Err(Error::config(format!(
                "hidden_units {} not divisible into {} p-norm groups",
                self.hidden_units, self.pnorm_out
            )));
        }
        contiguous_offsets(&self.context_offsets)
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let group = self.hidden_units / self.pnorm_out;
        let mut specs = vec![
            LayerSpec::Standardize { dim: self.input_dim() },
            LayerSpec::TimeDelay {
                offsets: self.context_offsets.clone(),
                in_dim: self.input_dim(),
            },
        ];
        let mut width = self.input_dim() * self.context_offsets.len();
        for _ in 0..self.hidden_layers {
            specs.push(LayerSpec::Dense {
                in_dim: width,
                out_dim: self.hidden_units,
            });
            specs.push(LayerSpec::PNorm { group_size: group, p: 2.0 });
            width = self.pnorm_out;
        }
        specs.push(LayerSpec::Dense {
            in_dim: width,
            out_dim: self.n_emotions,
        });
        specs.push(LayerSpec::Softmax);
        specs
    }
}

pub fn build_aer_net(cfg: &AerNetConfig, seed: u64) -> Result<NetworkCheckpoint> {
    cfg.validate()?;
    let net = init_network(cfg.layer_specs(), seed)?;
    Ok(NetworkCheckpoint::new(net)
        .with_meta(KEY_MODEL_KIND, KIND_AER)
        .with_meta(KEY_INPUT_DIM, cfg.input_dim())
        .with_meta(KEY_OUTPUT_DIM, cfg.n_emotions)
        .with_meta("fbank_dim", cfg.fbank_dim)
        .with_meta("ling_dim", cfg.ling_dim)
        .with_meta("spk_dim", cfg.spk_dim)
        .with_meta("pnorm_out", cfg.pnorm_out))
}

/// Emotion posteriors `[T x n_emotions]` and the emotion factor `[T x pnorm_out]`.
pub fn emotion_outputs(ckpt: &NetworkCheckpoint, input: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    ckpt.expect_kind(KIND_AER)?;
    check_input(ckpt, input)?;
    if input.nrows() == 0 {
        return Err(Error::NoFrames);
    }
    let net = &ckpt.network;
    let factor = net.forward_to(&tensor_of(input), 0..AER_FACTOR_LAYER + 1)?;
    let post = net.forward_to(&factor, AER_FACTOR_LAYER + 1..net.len())?;
    Ok((post.into_matrix(), factor.into_matrix()))
}
