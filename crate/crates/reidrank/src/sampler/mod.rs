//! Dataset model, synthetic identity-image generation, disk layout, and the
//! anchor-based mini-batch generator.

pub mod batch;
pub mod dataset;
pub mod disk;
pub mod synthetic;

pub use batch::{make_minibatch, AnchorUnit, PairBatch};
pub use dataset::{CameraView, Dataset, Identity, ImageKey, Manifest};
pub use disk::{load_dataset, save_dataset, LOAD_HEIGHT, LOAD_WIDTH};
pub use synthetic::{generate_synthetic, SyntheticConfig};
