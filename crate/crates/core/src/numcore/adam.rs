use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self { step: 0, m, v }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Usage(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::shape("adam", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pi, gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(p: &mut Tensor, g: f64, state: &mut AdamState, cfg: &AdamConfig) {
        let g = Tensor::scalar(g);
        adam_step(&mut [p], &[&g], state, cfg).unwrap();
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new([&p]);
        let cfg = AdamConfig::with_lr(0.1);
        step_scalar(&mut p, 1.0, &mut st, &cfg);
        // m̂ = 1, v̂ = 1 after bias correction
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::scalar(1.25);
        let mut st = AdamState::new([&p]);
        step_scalar(&mut p, 0.0, &mut st, &AdamConfig::with_lr(0.1));
        assert_eq!(p.item().unwrap(), 1.25);
    }

    #[test]
    fn two_steps_reduce_a_quadratic() {
        // f(x) = (x - 3)^2, f'(x) = 2(x - 3)
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new([&p]);
        let cfg = AdamConfig::with_lr(0.1);
        let mut last = f(0.0);
        for _ in 0..2 {
            let x = p.item().unwrap();
            step_scalar(&mut p, 2.0 * (x - 3.0), &mut st, &cfg);
            let now = f(p.item().unwrap());
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn rejects_mismatched_state() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new([&Tensor::zeros(&[2])]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut st, &AdamConfig::with_lr(0.1)).is_err());
    }
}
