use super::network::{Gradients, Network};
use crate::error::{Error, Result};

fn check_len(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    Ok(())
}

/// Heavy-ball SGD: `v = momentum * v - lr * g; p += v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    check_len(params, grads)?;
    check_len(params, velocity)?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_len(params, grads)?;
    check_len(params, &state.m)?;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
    Ok(())
}

pub trait Optimizer {
    fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()>;
    fn set_learning_rate(&mut self, lr: f64);
    fn learning_rate(&self) -> f64;
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(net: &Network, lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: net.zero_grads(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.len() != net.layers.len() {
            return Err(Error::dim("gradient layer count"));
        }
        for ((layer, g), v) in net.layers.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            sgd_step(&mut layer.params, g, v, self.lr, self.momentum)?;
        }
        Ok(())
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(net: &Network, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            states: net.layers.iter().map(|l| AdamState::new(l.params.len())).collect(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.len() != net.layers.len() {
            return Err(Error::dim("gradient layer count"));
        }
        for ((layer, g), s) in net.layers.iter_mut().zip(grads).zip(self.states.iter_mut()) {
            if !layer.params.is_empty() {
                adam_step(&mut layer.params, g, s, self.lr, self.beta1, self.beta2, self.eps)?;
            }
        }
        Ok(())
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[3.0, 4.0], &mut v, 0.0, 0.9).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[3.0, 4.0], &mut s, 0.0, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn sgd_on_square() {
        let mut w = vec![1.0];
        let mut v = vec![0.0];
        let grad = vec![2.0 * w[0]];
        sgd_step(&mut w, &grad, &mut v, 0.1, 0.0).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // f(w) = sum_i c_i (w_i - t_i)^2
        let target = [3.0, -1.5, 0.25];
        let curv = [1.0, 10.0, 0.5];
        let mut w = vec![0.0; 3];
        let mut s = AdamState::new(3);
        for step in 0..500 {
            let g: Vec<f64> = (0..3).map(|i| 2.0 * curv[i] * (w[i] - target[i])).collect();
            let lr = if step < 300 { 0.05 } else { 0.005 };
            adam_step(&mut w, &g, &mut s, lr, 0.9, 0.999, 1e-8).unwrap();
        }
        for i in 0..3 {
            assert!((w[i] - target[i]).abs() < 1e-3, "{w:?}");
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        assert!(matches!(
            sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.0),
            Err(Error::Dimension(_))
        ));
    }
}
