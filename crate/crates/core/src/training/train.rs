//! The adversarial training schedule.
//!
//! Each batch runs two phases. The main phase updates encoder, decoder and
//! excitation classifier on the full objective, with the inhibition
//! classifier held constant. The inhibition phase then fits the inhibition
//! classifier to the true cells on the detached inhibition latents, with
//! everything else held constant.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::losses::{
    beta_vae_loss, excitation_loss, inhibition_classifier_loss, inhibition_encoder_loss, overall_loss, target_batch,
};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::eventio::{EventSample, Frames, SampleSet};
use crate::model::{argmax_rows, Classifier, GuidedVae, Group};

/// Which epoch's weights [`train`] returns as its checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Lowest validation objective.
    Best,
    Last,
}

/// Which latent the inhibition adversary sees during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversaryInput {
    /// The reparameterized sample `z`.
    Sample,
    /// The posterior mean, so the encoder cannot hide position in values
    /// smaller than its own sampling noise.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// KL weight.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seeds initialisation, shuffling and latent noise.
    pub seed: u64,
    pub lambda_exc: f64,
    pub lambda_inh: f64,
    /// Inhibition-classifier updates per batch.
    pub inh_steps: usize,
    pub adversary_input: AdversaryInput,
    /// Every n-th sample is held out for validation; 0 disables.
    pub validation_every: usize,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            beta: 1.0,
            epochs: 50,
            batch_size: 16,
            lr: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            seed: 0,
            lambda_exc: 1.0,
            lambda_inh: 1.0,
            inh_steps: 1,
            adversary_input: AdversaryInput::Sample,
            validation_every: 10,
            selection: Selection::Best,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// The unguided ablation: both guidance weights zero.
    pub fn unguided(&self) -> Self {
        Self {
            lambda_exc: 0.0,
            lambda_inh: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self, excitation_dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.beta >= 0.0) || !(self.lambda_exc >= 0.0) || !(self.lambda_inh >= 0.0) {
            return bad("beta and loss weights must be non-negative".into());
        }
        if ![4, 8, 16].contains(&excitation_dim) {
            return bad(format!("excitation_dim must be 16, 8 or 4, got {excitation_dim}"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("invalid Adam hyperparameters".into());
        }
        Ok(())
    }
}

/// One row of the metrics log. Losses and accuracies are averaged over
/// the epoch's training batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub exc_loss: f64,
    pub inh_cls_loss: f64,
    pub exc_acc: f64,
    pub inh_cls_acc: f64,
    /// Validation objective (recon + beta kl + lambda_exc exc at z = mu);
    /// not part of the CSV.
    #[serde(skip)]
    pub val_objective: Option<f64>,
    pub wall_s: f64,
}

impl EpochMetrics {
    /// `recon + beta kl` on the training batches.
    pub fn vae_loss(&self, beta: f64) -> f64 {
        self.recon + beta * self.kl
    }
}

pub const METRICS_HEADER: [&str; 8] = [
    "epoch",
    "recon",
    "kl",
    "exc_loss",
    "inh_cls_loss",
    "exc_acc",
    "inh_cls_acc",
    "wall_s",
];

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.epoch.to_string(),
            r.recon.to_string(),
            r.kl.to_string(),
            r.exc_loss.to_string(),
            r.inh_cls_loss.to_string(),
            r.exc_acc.to_string(),
            r.inh_cls_acc.to_string(),
            format!("{:.3}", r.wall_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights chosen by [`TrainConfig::selection`].
    pub model: GuidedVae,
    pub selected_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

/// Sample indices for training and validation.
pub fn split_indices(n: usize, validation_every: usize) -> (Vec<usize>, Vec<usize>) {
    if validation_every < 2 || n < validation_every {
        return ((0..n).collect(), Vec::new());
    }
    (0..n).partition(|i| (i + 1) % validation_every != 0)
}

fn non_finite<T>(r: Result<T>, term: &'static str, epoch: usize, batch: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { term, epoch, batch },
        other => other,
    })
}

/// Values and gradients produced by one main-phase pass.
pub struct MainPhase {
    pub recon: f64,
    pub kl: f64,
    pub exc_loss: f64,
    pub exc_correct: usize,
    pub inh_correct: usize,
    /// Detached inhibition latents `[N, latent_dim - k]`.
    pub z_inh: Tensor,
    /// Per-parameter gradients; `None` for constants.
    pub grads: Vec<Option<Vec<f64>>>,
}

/// Forward and backward pass of the full objective on one batch. The
/// inhibition classifier is bound as constants.
pub fn main_phase(
    model: &GuidedVae,
    frames: &[&Frames],
    labels: &[usize],
    cap: u8,
    eps: &Tensor,
    cfg: &TrainConfig,
    at: (usize, usize),
) -> Result<MainPhase> {
    let (epoch, batch) = at;
    let a = model.arch();
    let (k, d) = (a.excitation_dim, a.latent_dim);
    let mut g = Graph::new();
    let b = model.bind(&mut g, |grp| grp != Group::InhClassifier);
    let inputs: Vec<Var> = crate::model::frames_to_inputs(frames, a)?
        .into_iter()
        .map(|t| g.input(t))
        .collect();
    let (mu, logvar) = non_finite(model.encoder_forward(&mut g, &b, &inputs), "encoder", epoch, batch)?;
    let z = non_finite(g.reparameterize(mu, logvar, eps), "kl", epoch, batch)?;
    let recon = non_finite(model.decoder_forward(&mut g, &b, z), "reconstruction", epoch, batch)?;
    let target = target_batch(frames, cap)?;
    let vae = non_finite(beta_vae_loss(&mut g, recon, &target, mu, logvar, cfg.beta), "reconstruction", epoch, batch)?;
    let z_exc = g.columns(z, 0, k)?;
    let exc_logits = non_finite(model.classifier_forward(&mut g, &b, Classifier::Excitation, z_exc), "excitation", epoch, batch)?;
    let exc = non_finite(excitation_loss(&mut g, exc_logits, labels), "excitation", epoch, batch)?;
    let adv_src = match cfg.adversary_input {
        AdversaryInput::Sample => z,
        AdversaryInput::Mean => mu,
    };
    let z_inh = g.columns(adv_src, k, d - k)?;
    let inh_logits = non_finite(model.classifier_forward(&mut g, &b, Classifier::Inhibition, z_inh), "inhibition", epoch, batch)?;
    let adv = non_finite(inhibition_encoder_loss(&mut g, inh_logits), "inhibition", epoch, batch)?;
    let total = non_finite(overall_loss(&mut g, vae.total, exc, adv, cfg.lambda_exc, cfg.lambda_inh), "total", epoch, batch)?;
    non_finite(g.backward(total), "total", epoch, batch)?;

    let count = |logits: Var| argmax_rows(g.value(logits)).iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(MainPhase {
        recon: g.value(vae.recon).data()[0],
        kl: g.value(vae.kl).data()[0],
        exc_loss: g.value(exc).data()[0],
        exc_correct: count(exc_logits),
        inh_correct: count(inh_logits),
        z_inh: g.value(z_inh).clone(),
        grads: b.vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec)).collect(),
    })
}

/// Inhibition-classifier loss and gradients on detached latents; all other
/// parameters are constants.
pub fn inhibition_phase(model: &GuidedVae, z_inh: &Tensor, labels: &[usize]) -> Result<(f64, usize, Vec<Option<Vec<f64>>>)> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, |grp| grp == Group::InhClassifier);
    let x = g.input(z_inh.clone());
    let logits = model.classifier_forward(&mut g, &b, Classifier::Inhibition, x)?;
    let loss = inhibition_classifier_loss(&mut g, logits, labels)?;
    g.backward(loss)?;
    let correct = argmax_rows(g.value(logits)).iter().zip(labels).filter(|(p, l)| p == l).count();
    let grads = b.vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec)).collect();
    Ok((g.value(loss).data()[0], correct, grads))
}

/// Adam over a fixed subset of the model's parameters.
struct SubsetOptimizer {
    indices: Vec<usize>,
    state: AdamState,
}

impl SubsetOptimizer {
    fn new(model: &GuidedVae, indices: Vec<usize>) -> Self {
        let params: Vec<Tensor> = indices.iter().map(|&i| model.params()[i].clone()).collect();
        Self {
            state: AdamState::new(&params),
            indices,
        }
    }

    fn step(&mut self, model: &mut GuidedVae, grads: &[Option<Vec<f64>>], cfg: &AdamConfig) -> Result<()> {
        let mut params: Vec<Tensor> = self.indices.iter().map(|&i| model.params()[i].clone()).collect();
        let g: Vec<Vec<f64>> = self
            .indices
            .iter()
            .zip(&params)
            .map(|(&i, p)| grads[i].clone().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        adam_step(&mut params, &g, &mut self.state, cfg)?;
        for (&i, p) in self.indices.iter().zip(params) {
            model.params_mut()[i] = p;
        }
        Ok(())
    }
}

/// Batch-averaged losses and excitation accuracy at `z = mu`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub recon: f64,
    pub kl: f64,
    pub exc_loss: f64,
    pub exc_acc: f64,
}

pub fn evaluate(model: &GuidedVae, samples: &[&EventSample], cap: u8) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let a = model.arch();
    let (mut recon, mut kl, mut exc, mut correct) = (0.0, 0.0, 0.0, 0usize);
    for chunk in samples.chunks(32) {
        let frames: Vec<&Frames> = chunk.iter().map(|s| &s.frames).collect();
        let labels: Vec<usize> = chunk.iter().map(|s| s.cell).collect();
        let mut g = Graph::new();
        let b = model.bind(&mut g, |_| false);
        let inputs: Vec<Var> = crate::model::frames_to_inputs(&frames, a)?
            .into_iter()
            .map(|t| g.input(t))
            .collect();
        let (mu, logvar) = model.encoder_forward(&mut g, &b, &inputs)?;
        let r = model.decoder_forward(&mut g, &b, mu)?;
        let vae = beta_vae_loss(&mut g, r, &target_batch(&frames, cap)?, mu, logvar, 1.0)?;
        let z_exc = g.columns(mu, 0, a.excitation_dim)?;
        let logits = model.classifier_forward(&mut g, &b, Classifier::Excitation, z_exc)?;
        let ce = excitation_loss(&mut g, logits, &labels)?;
        let n = chunk.len() as f64;
        recon += g.value(vae.recon).data()[0] * n;
        kl += g.value(vae.kl).data()[0] * n;
        exc += g.value(ce).data()[0] * n;
        correct += argmax_rows(g.value(logits)).iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    let n = samples.len() as f64;
    Ok(Evaluation {
        recon: recon / n,
        kl: kl / n,
        exc_loss: exc / n,
        exc_acc: correct as f64 / n,
    })
}

/// Trains `model` on `set`; `on_epoch` sees each metrics row as it lands.
pub fn train(
    set: &SampleSet,
    mut model: GuidedVae,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let a = model.arch().clone();
    cfg.validate(a.excitation_dim)?;
    if set.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if set.arena.num_cells() != a.num_classes {
        return Err(Error::Config(format!(
            "arena has {} cells but the model predicts {} classes",
            set.arena.num_cells(),
            a.num_classes
        )));
    }
    let cap = set.binning.clip_cap;
    let (train_idx, val_idx) = split_indices(set.len(), cfg.validation_every);
    let val: Vec<&EventSample> = val_idx.iter().map(|&i| &set.samples[i]).collect();

    let main_groups = [Group::Encoder, Group::Decoder, Group::ExcClassifier];
    let main_idx = (0..model.specs().len())
        .filter(|&i| main_groups.contains(&Group::of(&model.specs()[i].name)))
        .collect();
    let mut main_opt = SubsetOptimizer::new(&model, main_idx);
    let mut inh_opt = SubsetOptimizer::new(&model, model.group_indices(Group::InhClassifier));
    let adam = cfg.adam();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx.clone();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, GuidedVae)> = None;
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut recon, mut kl, mut exc, mut inh_loss) = (0.0, 0.0, 0.0, 0.0);
        let (mut exc_ok, mut inh_ok, mut seen) = (0usize, 0usize, 0usize);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let frames: Vec<&Frames> = batch.iter().map(|&i| &set.samples[i].frames).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| set.samples[i].cell).collect();
            let n = batch.len();
            let eps_data = (0..n * a.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eps = Tensor::new(vec![n, a.latent_dim], eps_data)?;

            let m = main_phase(&model, &frames, &labels, cap, &eps, cfg, (epoch, bi))?;
            main_opt.step(&mut model, &m.grads, &adam)?;

            let mut first_inh = None;
            for _ in 0..cfg.inh_steps {
                let (loss, correct, grads) = non_finite(inhibition_phase(&model, &m.z_inh, &labels), "inhibition", epoch, bi)?;
                first_inh.get_or_insert((loss, correct));
                inh_opt.step(&mut model, &grads, &adam)?;
            }
            let (il, _) = first_inh.unwrap_or((f64::NAN, 0));

            let w = n as f64;
            recon += m.recon * w;
            kl += m.kl * w;
            exc += m.exc_loss * w;
            inh_loss += il * w;
            exc_ok += m.exc_correct;
            inh_ok += m.inh_correct;
            seen += n;
        }
        let s = seen as f64;
        let val_objective = if val.is_empty() {
            None
        } else {
            let e = evaluate(&model, &val, cap)?;
            Some(e.recon + cfg.beta * e.kl + cfg.lambda_exc * e.exc_loss)
        };
        let row = EpochMetrics {
            epoch,
            recon: recon / s,
            kl: kl / s,
            exc_loss: exc / s,
            inh_cls_loss: inh_loss / s,
            exc_acc: exc_ok as f64 / s,
            inh_cls_acc: inh_ok as f64 / s,
            val_objective,
            wall_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        if let (Selection::Best, Some(v)) = (cfg.selection, val_objective) {
            if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
            }
        }
        metrics.push(row);
    }
    let (selected_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (cfg.epochs, model),
    };
    Ok(TrainOutcome {
        model,
        selected_epoch,
        metrics,
    })
}
