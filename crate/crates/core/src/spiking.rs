//! Discrete leaky integrate-and-fire dynamics trained with surrogate
//! gradients.
//!
//! Per step: `v_pre = decay * v + drive`, `spikes = H(v_pre - threshold)`,
//! then either subtract-reset `v_pre - threshold * spikes` or zero-reset
//! `v_pre * (1 - spikes)`. The forward spike is exact; the backward pass
//! uses the fast-sigmoid surrogate. Reset terms stay on the tape, so BPTT
//! flows through both the drive and the membrane recurrence.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, SpikeForward, Tensor, Var};
use crate::error::{shape_err, Error, Result};

pub use crate::autodiff::surrogate_derivative;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    Subtract,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifParams {
    /// Membrane decay per step, in (0, 1].
    pub decay: f64,
    pub threshold: f64,
    pub reset: ResetMode,
    pub surrogate_slope: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            decay: 0.9,
            threshold: 1.0,
            reset: ResetMode::Subtract,
            surrogate_slope: 10.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("lif.decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config(format!("lif.threshold must be > 0, got {}", self.threshold)));
        }
        if !(self.surrogate_slope > 0.0) {
            return Err(Error::Config(format!(
                "lif.surrogate_slope must be > 0, got {}",
                self.surrogate_slope
            )));
        }
        Ok(())
    }
}

/// Membrane potential of one layer, living on a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct LifState {
    pub membrane: Var,
}

impl LifState {
    /// Resting state (all zeros) shaped like `shape`.
    pub fn zeros(g: &mut Graph, shape: &[usize]) -> Self {
        Self {
            membrane: g.input(Tensor::zeros(shape)),
        }
    }
}

/// Advances the membrane by one step; returns `(spikes, next_state)`.
pub fn lif_step(g: &mut Graph, state: LifState, drive: Var, p: &LifParams) -> Result<(Var, LifState)> {
    lif_step_with(g, state, drive, p, SpikeForward::Heaviside)
}

pub fn lif_step_with(
    g: &mut Graph,
    state: LifState,
    drive: Var,
    p: &LifParams,
    forward: SpikeForward,
) -> Result<(Var, LifState)> {
    if g.shape(state.membrane) != g.shape(drive) {
        return Err(shape_err(
            "lif_step",
            format!("membrane {:?} vs drive {:?}", g.shape(state.membrane), g.shape(drive)),
        ));
    }
    let v_pre = g.axpby(state.membrane, drive, p.decay, 1.0)?;
    let spikes = g.spike(v_pre, p.threshold, p.surrogate_slope, forward)?;
    let next = match p.reset {
        ResetMode::Subtract => g.axpby(v_pre, spikes, 1.0, -p.threshold)?,
        ResetMode::Zero => g.reset_zero(v_pre, spikes)?,
    };
    Ok((spikes, LifState { membrane: next }))
}

/// Runs the recurrence over a drive sequence from a resting state.
pub fn lif_unroll(g: &mut Graph, drives: &[Var], p: &LifParams) -> Result<Vec<Var>> {
    lif_unroll_with(g, drives, p, SpikeForward::Heaviside)
}

pub fn lif_unroll_with(g: &mut Graph, drives: &[Var], p: &LifParams, forward: SpikeForward) -> Result<Vec<Var>> {
    let Some(first) = drives.first() else {
        return Err(shape_err("lif_unroll", "need at least one timestep"));
    };
    let shape = g.shape(*first).to_vec();
    let mut state = LifState::zeros(g, &shape);
    let mut out = Vec::with_capacity(drives.len());
    for &d in drives {
        let (s, next) = lif_step_with(g, state, d, p, forward)?;
        out.push(s);
        state = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::grad_check;

    fn scalar_drives(g: &mut Graph, values: &[f64]) -> Vec<Var> {
        values
            .iter()
            .map(|&v| g.input(Tensor::new(vec![1], vec![v]).unwrap()))
            .collect()
    }

    #[test]
    fn resting_neuron_stays_silent() {
        let mut g = Graph::new();
        let st = LifState::zeros(&mut g, &[1]);
        let d = g.input(Tensor::zeros(&[1]));
        let (s, next) = lif_step(&mut g, st, d, &LifParams::default()).unwrap();
        assert_eq!(g.value(s).data(), &[0.0]);
        assert_eq!(g.value(next.membrane).data(), &[0.0]);
    }

    #[test]
    fn hand_iterated_recurrence() {
        let p = LifParams::default();
        let mut g = Graph::new();
        let mut st = LifState::zeros(&mut g, &[1]);
        let expected_v = [0.4, 0.76, 0.084];
        let expected_s = [0.0, 0.0, 1.0];
        for step in 0..3 {
            let d = g.input(Tensor::full(&[1], 0.4));
            let (s, next) = lif_step(&mut g, st, d, &p).unwrap();
            assert_eq!(g.value(s).data()[0], expected_s[step]);
            assert!((g.value(next.membrane).data()[0] - expected_v[step]).abs() < 1e-12);
            st = next;
        }
    }

    #[test]
    fn strong_drive_spikes_immediately() {
        let mut g = Graph::new();
        let st = LifState::zeros(&mut g, &[1]);
        let d = g.input(Tensor::full(&[1], 2.0));
        let (s, _) = lif_step(&mut g, st, d, &LifParams::default()).unwrap();
        assert_eq!(g.value(s).data(), &[1.0]);
    }

    #[test]
    fn zero_reset_clears_membrane() {
        let p = LifParams {
            reset: ResetMode::Zero,
            ..LifParams::default()
        };
        let mut g = Graph::new();
        let st = LifState::zeros(&mut g, &[1]);
        let d = g.input(Tensor::full(&[1], 1.7));
        let (s, next) = lif_step(&mut g, st, d, &p).unwrap();
        assert_eq!(g.value(s).data(), &[1.0]);
        assert_eq!(g.value(next.membrane).data(), &[0.0]);
    }

    #[test]
    fn step_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let st = LifState::zeros(&mut g, &[2]);
        let d = g.input(Tensor::zeros(&[3]));
        assert!(lif_step(&mut g, st, d, &LifParams::default()).is_err());
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(surrogate_derivative(0.0, 10.0), 1.0);
        assert!((surrogate_derivative(1.0, 10.0) - 1.0 / 121.0).abs() < 1e-15);
        assert!((surrogate_derivative(1.0, 10.0) - 0.008264).abs() < 1e-6);
        assert_eq!(surrogate_derivative(0.37, 4.0), surrogate_derivative(-0.37, 4.0));
    }

    #[test]
    fn unroll_zero_drive_is_silent() {
        let mut g = Graph::new();
        let d = scalar_drives(&mut g, &[0.0; 6]);
        let s = lif_unroll(&mut g, &d, &LifParams::default()).unwrap();
        assert!(s.iter().all(|v| g.value(*v).data()[0] == 0.0));
    }

    #[test]
    fn unit_drive_without_leak_spikes_every_step() {
        let p = LifParams {
            decay: 1.0,
            ..LifParams::default()
        };
        let mut g = Graph::new();
        let d = scalar_drives(&mut g, &[1.0; 8]);
        let s = lif_unroll(&mut g, &d, &p).unwrap();
        assert!(s.iter().all(|v| g.value(*v).data()[0] == 1.0));
    }

    #[test]
    fn unroll_rejects_empty_sequence() {
        let mut g = Graph::new();
        assert!(lif_unroll(&mut g, &[], &LifParams::default()).is_err());
    }

    /// Forward-only smoothed LIF evaluated with plain loops; independent of
    /// the graph.
    fn smoothed_reference(drives: &[Vec<f64>], p: &LifParams, weights: &[f64]) -> f64 {
        let mut v = vec![0.0; drives[0].len()];
        let mut total = 0.0;
        let mut w = weights.iter();
        for d in drives {
            for (vi, di) in v.iter_mut().zip(d) {
                let pre = p.decay * *vi + di;
                let u = pre - p.threshold;
                let s = 0.5 + u / (1.0 + p.surrogate_slope * u.abs());
                total += s * w.next().unwrap();
                *vi = match p.reset {
                    ResetMode::Subtract => pre - p.threshold * s,
                    ResetMode::Zero => pre * (1.0 - s),
                };
            }
        }
        total
    }

    fn bptt_vs_fd(p: LifParams, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (steps, width) = (6, 3);
        let drives: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..width).map(|_| rng.random_range(0.0..1.2)).collect())
            .collect();
        let weights: Vec<f64> = (0..steps * width).map(|_| rng.random_range(0.5..1.5)).collect();

        let mut g = Graph::new();
        let vars: Vec<Var> = drives
            .iter()
            .map(|d| g.param(Tensor::new(vec![width], d.clone()).unwrap()))
            .collect();
        let spikes = lif_unroll_with(&mut g, &vars, &p, SpikeForward::Smoothed).unwrap();
        let mut terms = Vec::new();
        for (t, s) in spikes.iter().enumerate() {
            terms.push(g.weighted_sum(*s, weights[t * width..(t + 1) * width].to_vec()).unwrap());
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t).unwrap();
        }
        g.backward(loss).unwrap();

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for t in 0..steps {
            for i in 0..width {
                let mut plus = drives.clone();
                plus[t][i] += h;
                let mut minus = drives.clone();
                minus[t][i] -= h;
                let fd = (smoothed_reference(&plus, &p, &weights) - smoothed_reference(&minus, &p, &weights)) / (2.0 * h);
                let ad = g.grad(vars[t]).unwrap()[i];
                worst = worst.max((ad - fd).abs() / fd.abs().max(1e-8));
            }
        }
        worst
    }

    #[test]
    fn bptt_matches_fd_on_smoothed_forward() {
        for (seed, reset) in [(1, ResetMode::Subtract), (2, ResetMode::Zero), (3, ResetMode::Subtract)] {
            let p = LifParams {
                reset,
                ..LifParams::default()
            };
            let err = bptt_vs_fd(p, seed);
            assert!(err < 1e-4, "reset {reset:?}: {err}");
        }
    }

    #[test]
    fn graph_grad_check_accepts_smoothed_unroll() {
        let p = LifParams::default();
        let inputs: Vec<Tensor> = (0..4)
            .map(|t| Tensor::new(vec![2], vec![0.3 + 0.1 * t as f64, 0.9 - 0.2 * t as f64]).unwrap())
            .collect();
        let r = grad_check(
            |g, v| {
                let s = lif_unroll_with(g, v, &p, SpikeForward::Smoothed)?;
                let mut acc = s[0];
                for &x in &s[1..] {
                    acc = g.add(acc, x)?;
                }
                Ok(acc)
            },
            &inputs,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn early_drive_receives_credit_for_late_spike() {
        let p = LifParams::default();
        let mut g = Graph::new();
        let vars: Vec<Var> = [0.5, 0.4, 0.3, 0.0]
            .iter()
            .map(|&v| g.param(Tensor::full(&[1], v)))
            .collect();
        let s = lif_unroll(&mut g, &vars, &p).unwrap();
        // 0.5 -> 0.85 -> 1.065 spikes at step 3
        assert_eq!(g.value(s[2]).data(), &[1.0]);
        g.backward(s[2]).unwrap();
        assert!(g.grad(vars[0]).unwrap()[0].abs() > 0.0);
    }

    proptest! {
        #[test]
        fn spikes_are_binary_and_subtract_reset_conserves(
            drives in proptest::collection::vec(-2.0f64..3.0, 1..30),
            decay in 0.05f64..1.0,
            threshold in 0.1f64..2.0,
        ) {
            let p = LifParams { decay, threshold, ..LifParams::default() };
            let mut g = Graph::new();
            let mut st = LifState::zeros(&mut g, &[1]);
            for d in drives {
                let v_prev = g.value(st.membrane).data()[0];
                let dv = g.input(Tensor::full(&[1], d));
                let (s, next) = lif_step(&mut g, st, dv, &p).unwrap();
                let sv = g.value(s).data()[0];
                prop_assert!(sv == 0.0 || sv == 1.0);
                let lhs = g.value(next.membrane).data()[0] + sv * threshold;
                prop_assert!((lhs - (decay * v_prev + d)).abs() <= 1e-12);
                st = next;
            }
        }

        #[test]
        fn membrane_decays_geometrically_without_drive(v0 in -0.9f64..0.9, decay in 0.05f64..1.0, steps in 1usize..40) {
            let p = LifParams { decay, ..LifParams::default() };
            let mut g = Graph::new();
            let mut st = LifState { membrane: g.input(Tensor::full(&[1], v0)) };
            for t in 1..=steps {
                let d = g.input(Tensor::zeros(&[1]));
                let (_, next) = lif_step(&mut g, st, d, &p).unwrap();
                st = next;
                let v = g.value(st.membrane).data()[0];
                prop_assert!((v - decay.powi(t as i32) * v0).abs() <= 1e-12);
            }
        }
    }
}
