//! Post-hoc probes: a fresh classifier fitted to frozen latent slices
//! measures how much cell information those variables carry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::losses::one_hot;
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::model::argmax_rows;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Hidden width; 0 gives a linear probe.
    pub hidden: usize,
    /// Full-batch Adam steps.
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            steps: 400,
            lr: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeResult {
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Columns `start..start+len` of a `[N, F]` tensor.
pub fn slice_columns(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 2 || start + len > s[1] {
        return Err(shape_err("slice_columns", format!("columns {start}..{} of {s:?}", start + len)));
    }
    let data = x.data().chunks(s[1]).flat_map(|r| r[start..start + len].iter().copied()).collect();
    Tensor::new(vec![s[0], len], data)
}

fn standardize(train: &Tensor, other: &Tensor) -> Result<(Tensor, Tensor)> {
    let f = train.shape()[1];
    let n = train.shape()[0] as f64;
    let mut mean = vec![0.0; f];
    for row in train.data().chunks(f) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
    }
    let mut std = vec![0.0; f];
    for row in train.data().chunks(f) {
        std.iter_mut().zip(row).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
    }
    let std: Vec<f64> = std.into_iter().map(|v| v.sqrt().max(1e-8)).collect();
    let apply = |t: &Tensor| {
        let data = t
            .data()
            .chunks(f)
            .flat_map(|r| r.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect::<Vec<_>>())
            .collect();
        Tensor::new(t.shape().to_vec(), data)
    };
    Ok((apply(train)?, apply(other)?))
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64
}

/// Fits a fresh MLP on standardized `train_x` and reports accuracies.
pub fn probe_accuracy(
    train_x: &Tensor,
    train_y: &[usize],
    test_x: &Tensor,
    test_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if train_x.shape().len() != 2 || train_x.shape()[0] != train_y.len() || test_x.shape()[0] != test_y.len() {
        return Err(shape_err("probe", "feature rows and labels disagree"));
    }
    if train_y.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if test_x.shape().get(1) != train_x.shape().get(1) {
        return Err(shape_err("probe", "train and test feature widths differ"));
    }
    let (xtr, xte) = standardize(train_x, test_x)?;
    let f = xtr.shape()[1];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dims = vec![f];
    if cfg.hidden > 0 {
        dims.push(cfg.hidden);
    }
    dims.push(classes);
    let mut params = Vec::new();
    for w in dims.windows(2) {
        let bound = (6.0 / w[0] as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        params.push(Tensor::new(vec![w[1], w[0]], (0..w[0] * w[1]).map(|_| u.sample(&mut rng)).collect())?);
        params.push(Tensor::zeros(&[w[1]]));
    }
    let target = one_hot(train_y, classes)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    };
    let mut state = AdamState::new(&params);

    let forward = |g: &mut Graph, params: &[Tensor], x: &Tensor, trainable: bool| -> Result<_> {
        let vars: Vec<_> = params
            .iter()
            .map(|p| if trainable { g.param(p.clone()) } else { g.input(p.clone()) })
            .collect();
        let mut h = g.input(x.clone());
        let layers = vars.len() / 2;
        for l in 0..layers {
            h = g.linear(h, vars[2 * l], vars[2 * l + 1])?;
            if l + 1 < layers {
                h = g.relu(h)?;
            }
        }
        Ok((h, vars))
    };

    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let (logits, vars) = forward(&mut g, &params, &xtr, true)?;
        let loss = g.softmax_cross_entropy(logits, &target)?;
        g.backward(loss)?;
        let grads: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap_or(&[]).to_vec()).collect();
        adam_step(&mut params, &grads, &mut state, &adam)?;
    }
    let predict = |x: &Tensor| -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let (logits, _) = forward(&mut g, &params, x, false)?;
        Ok(argmax_rows(g.value(logits)))
    };
    Ok(ProbeResult {
        train_acc: accuracy(&predict(&xtr)?, train_y),
        test_acc: accuracy(&predict(&xte)?, test_y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, informative: bool, seed: u64) -> (Tensor, Vec<usize>) {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 4;
            labels.push(c);
            for j in 0..6 {
                let centre = if informative && j == c { 2.0 } else { 0.0 };
                data.push(centre + next());
            }
        }
        (Tensor::new(vec![n, 6], data).unwrap(), labels)
    }

    #[test]
    fn probe_finds_signal_and_not_noise() {
        let cfg = ProbeConfig::default();
        let (xtr, ytr) = blobs(200, true, 1);
        let (xte, yte) = blobs(100, true, 2);
        let r = probe_accuracy(&xtr, &ytr, &xte, &yte, 4, &cfg).unwrap();
        assert!(r.test_acc > 0.95, "{r:?}");
        let (xtr, ytr) = blobs(200, false, 3);
        let (xte, yte) = blobs(200, false, 4);
        let r = probe_accuracy(&xtr, &ytr, &xte, &yte, 4, &cfg).unwrap();
        assert!(r.test_acc < 0.4, "{r:?}");
    }

    #[test]
    fn slicing() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(slice_columns(&t, 1, 2).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
        assert!(slice_columns(&t, 2, 2).is_err());
    }
}
