use std::ops::Range;

use rand::Rng;

use super::layers::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
    },
    MaxPool2d {
        pool_h: usize,
        pool_w: usize,
    },
    TimeDelay {
        offsets: Vec<i32>,
        in_dim: usize,
    },
    PNorm {
        group_size: usize,
        p: f64,
    },
    /// Fixed per-dimension shift and scale; parameters are `[shift; scale]`
    /// and receive no gradient.
    Standardize {
        dim: usize,
    },
    Relu,
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::TimeDelay { .. } => "timedelay",
            LayerSpec::PNorm { .. } => "pnorm",
            LayerSpec::Standardize { .. } => "standardize",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LayerSpec::Dense { in_dim, out_dim } => *in_dim > 0 && *out_dim > 0,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
            } => [*in_channels, *out_channels, *kernel_h, *kernel_w, *stride]
                .iter()
                .all(|&v| v > 0),
            LayerSpec::MaxPool2d { pool_h, pool_w } => *pool_h > 0 && *pool_w > 0,
            LayerSpec::TimeDelay { offsets, in_dim } => {
                *in_dim > 0 && !offsets.is_empty() && offsets.windows(2).all(|w| w[0] < w[1])
            }
            LayerSpec::PNorm { group_size, p } => *group_size > 0 && *p >= 1.0,
            LayerSpec::Standardize { dim } => *dim > 0,
            LayerSpec::Relu | LayerSpec::Softmax => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid layer spec {self:?}")))
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => out_channels * in_channels * kernel_h * kernel_w + out_channels,
            LayerSpec::Standardize { dim } => 2 * dim,
            _ => 0,
        }
    }

    /// Layers whose parameters are set from data rather than trained.
    pub fn is_frozen(&self) -> bool {
        matches!(self, LayerSpec::Standardize { .. })
    }

    fn conv_geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
            } => Some(ConvGeometry {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
            }),
            _ => None,
        }
    }

    /// Weight count and fan-in/fan-out for Glorot initialisation.
    fn fans(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => Some((in_dim * out_dim, in_dim, out_dim)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => {
                let area = kernel_h * kernel_w;
                Some((
                    out_channels * in_channels * area,
                    in_channels * area,
                    out_channels * area,
                ))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<f64>,
}

impl Layer {
    pub fn new(spec: LayerSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::dim(format!(
                "{} layer needs {} parameters, got {}",
                spec.name(),
                spec.param_count(),
                params.len()
            )));
        }
        Ok(Layer { spec, params })
    }

    /// Uniform(-a, a) weights with `a = sqrt(6 / (fan_in + fan_out))`, zero
    /// biases; standardization starts as the identity.
    pub fn init<R: Rng>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = vec![0.0; spec.param_count()];
        if let LayerSpec::Standardize { dim } = spec {
            params[dim..].fill(1.0);
        }
        if let Some((n_weights, fan_in, fan_out)) = spec.fans() {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in params[..n_weights].iter_mut() {
                *w = rng.gen_range(-a..a);
            }
        }
        Ok(Layer { spec, params })
    }

    fn split(&self) -> (&[f64], &[f64]) {
        match self.spec.fans() {
            Some((n, _, _)) => self.params.split_at(n),
            None => (&[], &[]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match &self.spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let (w, b) = self.split();
                layers::dense_forward(x, w, b, *in_dim, *out_dim)
            }
            LayerSpec::Conv2d { .. } => {
                let (w, b) = self.split();
                layers::conv2d_forward(x, w, b, &self.spec.conv_geometry().expect("conv"))
            }
            LayerSpec::MaxPool2d { pool_h, pool_w } => layers::maxpool2d_forward(x, *pool_h, *pool_w),
            LayerSpec::TimeDelay { offsets, in_dim } => layers::timedelay_forward(x, offsets, *in_dim),
            LayerSpec::PNorm { group_size, p } => layers::pnorm_forward(x, *group_size, *p),
            LayerSpec::Standardize { dim } => {
                let (shift, scale) = self.params.split_at(*dim);
                layers::standardize_forward(x, shift, scale)
            }
            LayerSpec::Relu => Ok(layers::relu_forward(x)),
            LayerSpec::Softmax => Ok(layers::softmax_forward(x)),
        }
    }

    /// Accumulates parameter gradients into `param_grad` and returns the input
    /// gradient.
    pub fn backward(&self, x: &Tensor, y: &Tensor, grad_out: &Tensor, param_grad: &mut [f64]) -> Result<Tensor> {
        match &self.spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let (w, _) = self.split();
                layers::dense_backward(grad_out, x, w, *in_dim, *out_dim, param_grad)
            }
            LayerSpec::Conv2d { .. } => {
                let (w, _) = self.split();
                layers::conv2d_backward(grad_out, x, w, &self.spec.conv_geometry().expect("conv"), param_grad)
            }
            LayerSpec::MaxPool2d { pool_h, pool_w } => {
                layers::maxpool2d_backward(grad_out, x, *pool_h, *pool_w)
            }
            LayerSpec::TimeDelay { offsets, in_dim } => {
                layers::timedelay_backward(grad_out, x, offsets, *in_dim)
            }
            LayerSpec::PNorm { group_size, p } => layers::pnorm_backward(grad_out, x, y, *group_size, *p),
            LayerSpec::Standardize { dim } => layers::standardize_backward(grad_out, &self.params[*dim..]),
            LayerSpec::Relu => layers::relu_backward(grad_out, x),
            LayerSpec::Softmax => layers::softmax_backward(grad_out, y),
        }
    }
}

/// Per-layer parameter gradients, shaped like the network's parameters.
pub type Gradients = Vec<Vec<f64>>;

/// Sequential layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn init<R: Rng>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let layers = specs
            .into_iter()
            .map(|s| Layer::init(s, rng))
            .collect::<Result<_>>()?;
        Ok(Network { layers })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        self.layers.iter().map(|l| vec![0.0; l.params.len()]).collect()
    }

    /// Index one past the last non-softmax layer: the logits boundary.
    pub fn logits_end(&self) -> usize {
        match self.layers.last() {
            Some(Layer {
                spec: LayerSpec::Softmax,
                ..
            }) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_to(x, 0..self.layers.len())
    }

    /// Output of `layers[range]` without keeping intermediates.
    pub fn forward_to(&self, x: &Tensor, range: Range<usize>) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers[range] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// All activations of `layers[range]`: element 0 is the input, element
    /// `i + 1` the output of the `i`-th layer in the range.
    pub fn forward_trace(&self, x: Tensor, range: Range<usize>) -> Result<Vec<Tensor>> {
        let mut acts = Vec::with_capacity(range.len() + 1);
        acts.push(x);
        for layer in &self.layers[range] {
            let next = layer.forward(acts.last().expect("non-empty"))?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Backpropagates `grad_out` through `layers[range]` using the trace from
    /// [`Network::forward_trace`], accumulating into `grads`. Returns the
    /// gradient w.r.t. the range input.
    pub fn backward_trace(
        &self,
        range: Range<usize>,
        acts: &[Tensor],
        grad_out: Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        if acts.len() != range.len() + 1 {
            return Err(Error::dim("activation trace does not match layer range"));
        }
        let mut g = grad_out;
        for (i, li) in range.clone().enumerate().rev() {
            g = self.layers[li].backward(&acts[i], &acts[i + 1], &g, &mut grads[li])?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_invariants() {
        assert!(LayerSpec::PNorm { group_size: 2, p: 0.5 }.validate().is_err());
        assert!(LayerSpec::TimeDelay {
            offsets: vec![0, 0],
            in_dim: 3
        }
        .validate()
        .is_err());
        assert!(LayerSpec::TimeDelay {
            offsets: vec![],
            in_dim: 3
        }
        .validate()
        .is_err());
        assert_eq!(LayerSpec::Dense { in_dim: 3, out_dim: 2 }.param_count(), 8);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let specs = vec![
            LayerSpec::Dense { in_dim: 10, out_dim: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 6, out_dim: 3 },
            LayerSpec::Softmax,
        ];
        let a = Network::init(specs.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = Network::init(specs, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a.layers[0].params[..60].iter().all(|w| w.abs() < bound));
        assert!(a.layers[0].params[60..].iter().all(|&b| b == 0.0));
        assert_eq!(a.logits_end(), 3);
        let y = a.forward(&Tensor::zeros(vec![4, 10])).unwrap();
        assert_eq!(y.shape(), &[4, 3]);
    }
}
