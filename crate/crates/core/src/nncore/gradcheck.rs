//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::batch_cross_entropy;
use super::network::{Gradients, Network};
use super::Tensor;
use crate::error::{Error, Result};

/// Training objective evaluated on a network's output.
#[derive(Debug, Clone)]
pub enum Objective {
    /// Mean cross-entropy on the logits (the final softmax, if any, is skipped).
    /// `None` rows are excluded.
    CrossEntropy(Vec<Option<usize>>),
    /// Mean over rows of the squared Euclidean error.
    SquaredError(Tensor),
}

pub fn squared_error(y: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if y.shape() != target.shape() {
        return Err(Error::dim(format!(
            "output {:?} vs target {:?}",
            y.shape(),
            target.shape()
        )));
    }
    let n = y.rows().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = y
        .values()
        .iter()
        .zip(target.values())
        .map(|(a, b)| {
            let d = a - b;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(y.shape().to_vec(), grad)?))
}

/// Objective value and full parameter gradients by backpropagation.
pub fn loss_and_gradients(net: &Network, input: &Tensor, objective: &Objective) -> Result<(f64, Gradients)> {
    let end = match objective {
        Objective::CrossEntropy(_) => net.logits_end(),
        Objective::SquaredError(_) => net.len(),
    };
    let acts = net.forward_trace(input.clone(), 0..end)?;
    let out = acts.last().expect("trace includes input");
    let (loss, g) = match objective {
        Objective::CrossEntropy(labels) => {
            let (loss, g, _) = batch_cross_entropy(out, labels)?;
            (loss, g)
        }
        Objective::SquaredError(target) => squared_error(out, target)?,
    };
    let mut grads = net.zero_grads();
    net.backward_trace(0..end, &acts, g, &mut grads)?;
    Ok((loss, grads))
}

pub fn objective_value(net: &Network, input: &Tensor, objective: &Objective) -> Result<f64> {
    match objective {
        Objective::CrossEntropy(labels) => {
            let logits = net.forward_to(input, 0..net.logits_end())?;
            Ok(batch_cross_entropy(&logits, labels)?.0)
        }
        Objective::SquaredError(target) => squared_error(&net.forward(input)?, target).map(|r| r.0),
    }
}

/// Anything with addressable parameters, a scalar loss and analytic gradients.
pub trait GradientModel: Clone {
    /// Number of parameters in each block.
    fn block_sizes(&self) -> Vec<usize>;
    fn param_mut(&mut self, block: usize, index: usize) -> &mut f64;
    fn loss(&self) -> Result<f64>;
    fn gradients(&self) -> Result<Gradients>;
}

/// A network paired with a fixed input and objective.
#[derive(Clone)]
pub struct NetworkObjective<'a> {
    pub network: Network,
    pub input: &'a Tensor,
    pub objective: &'a Objective,
}

impl GradientModel for NetworkObjective<'_> {
    /// Frozen layers expose no parameters.
    fn block_sizes(&self) -> Vec<usize> {
        self.network
            .layers
            .iter()
            .map(|l| if l.spec.is_frozen() { 0 } else { l.params.len() })
            .collect()
    }

    fn param_mut(&mut self, block: usize, index: usize) -> &mut f64 {
        &mut self.network.layers[block].params[index]
    }

    fn loss(&self) -> Result<f64> {
        objective_value(&self.network, self.input, self.objective)
    }

    fn gradients(&self) -> Result<Gradients> {
        let (_, mut grads) = loss_and_gradients(&self.network, self.input, self.objective)?;
        for (g, l) in grads.iter_mut().zip(&self.network.layers) {
            if l.spec.is_frozen() {
                g.clear();
            }
        }
        Ok(grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub block: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tolerance: f64,
    /// Check at most this many parameters, drawn without replacement from a
    /// seeded generator when the model is larger.
    pub max_params: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tolerance: 1e-4,
            max_params: Some(2000),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub offending_parameter: Option<ParamRef>,
    pub checked: usize,
    /// Points where the one-sided differences disagree (ReLU kinks, max-pool
    /// switches, zero p-norm groups); the finite difference is meaningless there.
    pub skipped_nonsmooth: usize,
    pub failures: Vec<(ParamRef, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks `net` on `input` under `objective` against its own backprop.
pub fn grad_check(net: &Network, input: &Tensor, objective: &Objective, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let model = NetworkObjective {
        network: net.clone(),
        input,
        objective,
    };
    let analytic = model.gradients()?;
    grad_check_against(&model, &analytic, opts)
}

/// Compares supplied gradients against central differences of `model.loss()`.
pub fn grad_check_against<M: GradientModel>(model: &M, analytic: &Gradients, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let sizes = model.block_sizes();
    if analytic.len() != sizes.len() || analytic.iter().zip(&sizes).any(|(g, &n)| g.len() != n) {
        return Err(Error::dim("analytic gradients do not match model parameters"));
    }
    let all: Vec<ParamRef> = sizes
        .iter()
        .enumerate()
        .flat_map(|(block, &n)| (0..n).map(move |index| ParamRef { block, index }))
        .collect();
    let chosen: Vec<ParamRef> = match opts.max_params {
        Some(limit) if limit < all.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, all.len(), limit).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        }
        _ => all,
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        offending_parameter: None,
        checked: 0,
        skipped_nonsmooth: 0,
        failures: Vec::new(),
    };
    let mut probe = model.clone();
    let h = opts.h;
    for p in chosen {
        let original = *probe.param_mut(p.block, p.index);
        *probe.param_mut(p.block, p.index) = original + h;
        let plus = probe.loss()?;
        *probe.param_mut(p.block, p.index) = original - h;
        let minus = probe.loss()?;
        *probe.param_mut(p.block, p.index) = original;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[p.block][p.index];
        let err = relative_error(a, numeric);
        if err >= opts.tolerance {
            let center = probe.loss()?;
            let forward = (plus - center) / h;
            let backward = (center - minus) / h;
            let scale = forward.abs().max(backward.abs()).max(1e-3);
            if (forward - backward).abs() > 1e-3 * scale {
                report.skipped_nonsmooth += 1;
                continue;
            }
            report.failures.push((p, err));
        }
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.offending_parameter = Some(p);
        }
    }
    Ok(report)
}
