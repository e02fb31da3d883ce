use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_input, contiguous_offsets, dense_stack, init_network, tensor_of, KEY_INPUT_DIM, KEY_OUTPUT_DIM, KIND_PHONE};
use crate::error::{Error, Result};
use crate::nncore::{LayerSpec, NetworkCheckpoint, KEY_MODEL_KIND};

/// Frame-level phone classifier: standardized and spliced Fbank context,
/// ReLU hidden layers, softmax over phones. Its posteriors are the linguistic factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhoneNetConfig {
    pub input_dim: usize,
    pub n_phones: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub context_offsets: Vec<i32>,
}

impl Default for PhoneNetConfig {
    fn default() -> Self {
        PhoneNetConfig {
            input_dim: 40,
            n_phones: 20,
            hidden_layers: 4,
            hidden_units: 128,
            context_offsets: (-4..=4).collect(),
        }
    }
}

impl PhoneNetConfig {
    pub fn paper_scale(self) -> Self {
        PhoneNetConfig {
            hidden_units: 1024,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_phones < 2 {
            return Err(Error::config(format!("n_phones must be at least 2, got {}", self.n_phones)));
        }
        if self.input_dim == 0 || self.hidden_units == 0 {
            return Err(Error::config("phone net dimensions must be positive"));
        }
        contiguous_offsets(&self.context_offsets)
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![self.input_dim * self.context_offsets.len()];
        dims.extend(std::iter::repeat(self.hidden_units).take(self.hidden_layers));
        dims.push(self.n_phones);
        let mut specs = vec![
            LayerSpec::Standardize { dim: self.input_dim },
            LayerSpec::TimeDelay {
                offsets: self.context_offsets.clone(),
                in_dim: self.input_dim,
            },
        ];
        specs.extend(dense_stack(&dims, |_| vec![LayerSpec::Relu]));
        specs.push(LayerSpec::Softmax);
        specs
    }
}

pub fn build_phone_net(cfg: &PhoneNetConfig, seed: u64) -> Result<NetworkCheckpoint> {
    cfg.validate()?;
    let net = init_network(cfg.layer_specs(), seed)?;
    Ok(NetworkCheckpoint::new(net)
        .with_meta(KEY_MODEL_KIND, KIND_PHONE)
        .with_meta(KEY_INPUT_DIM, cfg.input_dim)
        .with_meta(KEY_OUTPUT_DIM, cfg.n_phones))
}

/// Per-frame phone posteriors `[T x n_phones]`.
pub fn phone_posteriors(ckpt: &NetworkCheckpoint, fbank: &Array2<f64>) -> Result<Array2<f64>> {
    ckpt.expect_kind(KIND_PHONE)?;
    check_input(ckpt, fbank)?;
    if fbank.nrows() == 0 {
        return Err(Error::NoFrames);
    }
    Ok(ckpt.network.forward(&tensor_of(fbank))?.into_matrix())
}
