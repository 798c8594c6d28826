//! Loss terms of the guided objective, built on a [`Graph`].

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::eventio::Frames;

/// Per-channel time aggregate of a frame stack, `[C, H, W]`: the maximum
/// count over time divided by `cap`, so binary frames give binary targets.
pub fn reconstruction_target(frames: &Frames, cap: u8) -> Vec<f64> {
    let per = Frames::CHANNELS * frames.h * frames.w;
    let mut out = vec![0u8; per];
    for f in frames.data.chunks(per) {
        for (o, &v) in out.iter_mut().zip(f) {
            *o = (*o).max(v);
        }
    }
    let cap = cap.max(1) as f64;
    out.into_iter().map(|v| (v as f64 / cap).min(1.0)).collect()
}

/// Stacks per-sample targets into `[N, C, H, W]`.
pub fn target_batch(frames: &[&Frames], cap: u8) -> Result<Tensor> {
    let Some(first) = frames.first() else {
        return Err(shape_err("target_batch", "empty batch"));
    };
    let (h, w) = (first.h, first.w);
    let data = frames.iter().flat_map(|f| reconstruction_target(f, cap)).collect();
    Tensor::new(vec![frames.len(), Frames::CHANNELS, h, w], data)
}

/// One-hot rows for class labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(shape_err("one_hot", format!("label {l} outside {classes} classes")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Rows of `1 / classes`: the maximally uninformative prediction.
pub fn uniform_target(n: usize, classes: usize) -> Tensor {
    Tensor::full(&[n, classes], 1.0 / classes as f64)
}

/// Graph handles of the β-VAE objective.
#[derive(Clone, Copy, Debug)]
pub struct VaeLoss {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

/// `recon + beta * kl`, where `recon` is the summed BCE and `kl` the
/// summed Gaussian KL, both batch-averaged.
pub fn beta_vae_loss(g: &mut Graph, recon: Var, target: &Tensor, mu: Var, logvar: Var, beta: f64) -> Result<VaeLoss> {
    let r = g.bce(recon, target)?;
    let kl = g.gaussian_kl(mu, logvar)?;
    let total = g.axpby(r, kl, 1.0, beta)?;
    Ok(VaeLoss { total, recon: r, kl })
}

/// Cross-entropy of excitation logits against the true cells.
pub fn excitation_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let k = g.shape(logits)[1];
    g.softmax_cross_entropy(logits, &one_hot(labels, k)?)
}

/// Inhibition classifier objective: cross-entropy against the true cells.
pub fn inhibition_classifier_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    excitation_loss(g, logits, labels)
}

/// Encoder-side adversarial objective: cross-entropy of the inhibition
/// logits against the uniform distribution.
pub fn inhibition_encoder_loss(g: &mut Graph, logits: Var) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 {
        return Err(shape_err("inhibition_encoder_loss", format!("logits {s:?}")));
    }
    g.softmax_cross_entropy(logits, &uniform_target(s[0], s[1]))
}

/// `vae + lambda_exc * exc + lambda_inh * inh_adv`.
pub fn overall_loss(g: &mut Graph, vae: Var, exc: Var, inh_adv: Var, lambda_exc: f64, lambda_inh: f64) -> Result<Var> {
    let guided = g.axpby(exc, inh_adv, lambda_exc, lambda_inh)?;
    g.add(vae, guided)
}
