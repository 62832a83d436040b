//! Instance feature field: classifier, supervision ids, cross-view mask
//! association and training.

mod associate;
mod classifier;
mod supervision;
mod train;

pub use associate::{associate_masks, MIN_JACCARD, MIN_MASK_PIXELS};
pub use classifier::{classify_gaussians, Classifier};
pub use supervision::SupervisionSet;
pub use train::{train_field, TrainParams, TrainReport};
