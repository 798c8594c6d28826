//! Hybrid guided variational autoencoder for event-based visual place
//! recognition.
//!
//! The pipeline runs from raw event streams ([`eventio`], [`synthgen`])
//! through a spiking convolutional encoder trained with surrogate-gradient
//! BPTT ([`spiking`], [`model`], [`training`]) to sequence-based place
//! retrieval ([`localization`]). All numerics run on the small reverse-mode
//! engine in [`autodiff`].

pub mod autodiff;
pub mod config;
pub mod container;
pub mod error;
pub mod eventio;
pub mod localization;
pub mod model;
pub mod pipeline;
pub mod spiking;
pub mod synthgen;
pub mod training;

pub use config::{Profile, RunConfig};
pub use error::{Error, Result};
pub use eventio::{ArenaConfig, Event, EventStream, Pose, PoseSample, SampleSet};
pub use localization::{LatentSequence, ReferenceDatabase};
pub use model::{ArchConfig, GuidedVae};
pub use spiking::LifParams;
pub use training::TrainConfig;
