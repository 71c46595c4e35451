//! Small trainable classifiers with hand-written gradients.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

pub use model::{ArchKind, ArchSpec, Example, ModelState};
pub use train::{train, History, TrainConfig};
