//! Guided training: loss terms, the alternating adversarial schedule and
//! latent probes.

mod losses;
mod probe;
mod train;

pub use losses::{
    beta_vae_loss, excitation_loss, inhibition_classifier_loss, inhibition_encoder_loss, one_hot, overall_loss,
    reconstruction_target, target_batch, uniform_target, VaeLoss,
};
pub use probe::{probe_accuracy, slice_columns, ProbeConfig, ProbeResult};
pub use train::{
    evaluate, inhibition_phase, AdversaryInput, main_phase, split_indices, train, write_metrics_csv, EpochMetrics, Evaluation,
    MainPhase, Selection, TrainConfig, TrainOutcome, METRICS_HEADER,
};
