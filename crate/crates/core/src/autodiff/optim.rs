use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{shape_err, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || p.numel() != state.m[i].len() {
            return Err(shape_err(
                "adam_step",
                format!("parameter {i}: {} values, {} grads", p.numel(), g.len()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Tensor> {
        vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = params();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0; 3]], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, params());
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = params();
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[vec![1.0, 1.0, 1.0]], &mut st, &cfg).unwrap();
        let m1 = st.first_moment(0)[0];
        let v1 = st.second_moment(0)[0];
        adam_step(&mut p, &[vec![0.0; 3]], &mut st, &cfg).unwrap();
        assert!((st.first_moment(0)[0] - 0.9 * m1).abs() < 1e-15);
        assert!((st.second_moment(0)[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = params();
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        let g = vec![0.3, -4.0, 1e-3];
        adam_step(&mut p, &[g.clone()], &mut st, &cfg).unwrap();
        for ((after, before), g) in p[0].data().iter().zip(params()[0].data()).zip(&g) {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            let expect = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((after - before - expect).abs() < 1e-15);
            assert!(((after - before) + g.signum() * cfg.lr).abs() <= cfg.lr * cfg.eps / g.abs() + 1e-15);
        }
    }

    #[test]
    fn deterministic_from_identical_state() {
        let cfg = AdamConfig::default();
        let g = vec![vec![0.1, 0.2, -0.3]];
        let mut a = params();
        let mut sa = AdamState::new(&a);
        let mut b = params();
        let mut sb = AdamState::new(&b);
        adam_step(&mut a, &g, &mut sa, &cfg).unwrap();
        adam_step(&mut b, &g, &mut sb, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn vanishing_lr_changes_nothing() {
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let mut p = params();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![5.0, -5.0, 1.0]], &mut st, &cfg).unwrap();
        for (a, b) in p[0].data().iter().zip(params()[0].data()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn rejects_mismatched_grads() {
        let mut p = params();
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &[vec![0.0; 2]], &mut st, &AdamConfig::default()).is_err());
    }
}
