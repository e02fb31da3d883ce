//! Builders and runners for the three factor networks.
//!
//! Each builder is a pure function of its config and seed and returns a
//! checkpoint whose metadata carries everything the runner needs. Runners
//! check `model_kind` before touching the weights.

mod aer;
mod ctdnn;
mod phone;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use aer::{build_aer_net, emotion_outputs, AerNetConfig, AER_FACTOR_LAYER};
pub use ctdnn::{build_ctdnn, ctdnn_windows, speaker_features, CtdnnConfig, CtdnnGeometry, CTDNN_FEATURE_LAYER};
pub use phone::{build_phone_net, phone_posteriors, PhoneNetConfig};

use crate::error::{Error, Result};
use crate::nncore::{LayerSpec, Network, NetworkCheckpoint, Tensor};

pub const KIND_PHONE: &str = "phone";
pub const KIND_CTDNN: &str = "ctdnn";
pub const KIND_AER: &str = "aer";

/// Metadata key for the per-frame input width a network expects.
pub const KEY_INPUT_DIM: &str = "input_dim";
pub const KEY_OUTPUT_DIM: &str = "output_dim";

/// Floor on the standard deviation used to scale an input dimension.
pub const STD_FLOOR: f64 = 1e-2;

/// Per-dimension mean and standard deviation over the rows of all matrices.
pub fn input_statistics<'a>(frames: impl IntoIterator<Item = &'a Array2<f64>> + Clone) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut dim = None;
    let mut n = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    for m in frames.clone() {
        let d = *dim.get_or_insert(m.ncols());
        if d != m.ncols() {
            return Err(Error::dim("frames of differing width"));
        }
        sum.resize(d, 0.0);
        for row in m.rows() {
            sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
        n += m.nrows();
    }
    if n == 0 {
        return Err(Error::NoFrames);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0; mean.len()];
    for m in frames {
        for row in m.rows() {
            sq.iter_mut().zip(row).zip(&mean).for_each(|((s, v), mu)| *s += (v - mu) * (v - mu));
        }
    }
    let std = sq.iter().map(|s| (s / n as f64).sqrt()).collect();
    Ok((mean, std))
}

/// Loads per-frame statistics into the leading standardization layer. For
/// the CT-DNN they are tiled over every window row; padded columns pass
/// through unchanged.
pub fn set_standardization(ckpt: &mut NetworkCheckpoint, mean: &[f64], std: &[f64]) -> Result<()> {
    let input_dim: usize = ckpt.meta_parse(KEY_INPUT_DIM)?;
    if mean.len() != input_dim || std.len() != input_dim {
        return Err(Error::dim(format!(
            "statistics of width {} for {input_dim}-dim input",
            mean.len()
        )));
    }
    let (rows, width) = if ckpt.model_kind() == Some(KIND_CTDNN) {
        let g = CtdnnGeometry::from_checkpoint(ckpt)?;
        (g.window_frames, g.padded_dim)
    } else {
        (1, input_dim)
    };
    let layer = ckpt
        .network
        .layers
        .first_mut()
        .filter(|l| matches!(l.spec, LayerSpec::Standardize { dim } if dim == rows * width))
        .ok_or_else(|| Error::config("network does not start with a matching standardization layer"))?;
    let n = rows * width;
    for r in 0..rows {
        for c in 0..input_dim {
            layer.params[r * width + c] = mean[c];
            layer.params[n + r * width + c] = 1.0 / std[c].max(STD_FLOOR);
        }
    }
    Ok(())
}

pub(crate) fn init_network(specs: Vec<LayerSpec>, seed: u64) -> Result<Network> {
    Network::init(specs, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub(crate) fn check_input(ckpt: &NetworkCheckpoint, input: &Array2<f64>) -> Result<usize> {
    let dim: usize = ckpt.meta_parse(KEY_INPUT_DIM)?;
    if input.ncols() != dim {
        return Err(Error::config(format!(
            "{} network expects {dim}-dim frames, got {}",
            ckpt.model_kind().unwrap_or("?"),
            input.ncols()
        )));
    }
    Ok(dim)
}

/// Dense layer stack `dims[0] -> dims[1] -> ...` with `act` after every hidden layer.
pub(crate) fn dense_stack(dims: &[usize], act: impl Fn(usize) -> Vec<LayerSpec>) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        specs.push(LayerSpec::Dense {
            in_dim: w[0],
            out_dim: w[1],
        });
        if i + 2 < dims.len() {
            specs.extend(act(w[1]));
        }
    }
    specs
}

pub(crate) fn contiguous_offsets(offsets: &[i32]) -> Result<()> {
    if offsets.is_empty() || offsets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("context offsets must be strictly increasing and non-empty"));
    }
    Ok(())
}

pub(crate) fn tensor_of(input: &Array2<f64>) -> Tensor {
    Tensor::from_matrix(input)
}
