//! End-to-end glue shared by the command line and the acceptance runner.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eventio::{make_samples, ArenaConfig, EventSample, Frames, SampleSet, SamplingConfig};
use crate::localization::{build_sequences, localization_report, LocalizationReport, ReferenceDatabase};
use crate::model::{argmax_rows, Classifier, GuidedVae};
use crate::synthgen::{synthesize, SynthConfig};
use crate::training::{probe_accuracy, slice_columns, ProbeConfig, ProbeResult};

/// Renders one synthetic recording and cuts it into labelled samples.
pub fn synth_samples(synth: &SynthConfig, arena: &ArenaConfig, sampling: &SamplingConfig) -> Result<SampleSet> {
    let (poses, stream) = synthesize(synth, arena)?;
    Ok(SampleSet {
        arena: *arena,
        binning: sampling.binning,
        samples: make_samples(&stream, &poses, arena, sampling)?,
    })
}

/// Posterior means for every sample, `[n, latent_dim]`.
pub fn latent_means(model: &GuidedVae, samples: &[EventSample]) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let frames: Vec<&Frames> = samples.iter().map(|s| &s.frames).collect();
    Ok(model.encode(&frames)?.mu)
}

pub fn labels(samples: &[EventSample]) -> Vec<usize> {
    samples.iter().map(|s| s.cell).collect()
}

pub fn coords(samples: &[EventSample]) -> Vec<(f64, f64)> {
    samples.iter().map(|s| (s.pose.x, s.pose.y)).collect()
}

/// Argmax accuracy of the trained excitation classifier (run on `mu`).
pub fn excitation_accuracy(model: &GuidedVae, samples: &[EventSample]) -> Result<f64> {
    let mu = latent_means(model, samples)?;
    let k = model.arch().excitation_dim;
    let logits = model.classify(Classifier::Excitation, &slice_columns(&mu, 0, k)?)?;
    let y = labels(samples);
    let hits = argmax_rows(&logits).iter().zip(&y).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Which latent columns a freshly trained probe gets to see.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentPart {
    Excitation,
    Inhibition,
}

/// Trains a new classifier on frozen latents of `train` and reports its
/// accuracy on `test`.
pub fn latent_probe(
    model: &GuidedVae,
    train: &[EventSample],
    test: &[EventSample],
    part: LatentPart,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let a = model.arch();
    let (start, len) = match part {
        LatentPart::Excitation => (0, a.excitation_dim),
        LatentPart::Inhibition => (a.excitation_dim, a.inhibition_dim()),
    };
    let xs = slice_columns(&latent_means(model, train)?, start, len)?;
    let xt = slice_columns(&latent_means(model, test)?, start, len)?;
    probe_accuracy(&xs, &labels(train), &xt, &labels(test), a.num_classes, cfg)
}

/// Retrieval of every query sequence against the reference recording.
pub fn localize_samples(
    model: &GuidedVae,
    references: &[EventSample],
    queries: &[EventSample],
    seq_len: usize,
) -> Result<LocalizationReport> {
    let k = model.arch().excitation_dim;
    let db = ReferenceDatabase::build(&latent_means(model, references)?, k, &coords(references), seq_len)?;
    let q = build_sequences(&latent_means(model, queries)?, k, &coords(queries), seq_len)?;
    localization_report(&q, &db)
}
