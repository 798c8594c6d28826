//! Model assembly, size accounting and checkpoints.

mod arch;
mod checkpoint;
mod net;

pub use arch::{ArchConfig, Group, ParamSpec};
pub use checkpoint::CHECKPOINT_KIND;
pub use net::{argmax_rows, frames_to_inputs, Bound, Classifier, Encoded, GuidedVae, LatentCode};
