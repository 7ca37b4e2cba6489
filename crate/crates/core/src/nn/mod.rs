//! Dense/conv1d network engine with exact backpropagation, Adam, and FLOP accounting.

mod adam;
mod layer;
mod model;

pub use adam::AdamState;
pub use layer::{Architecture, LayerSpec, LayerToken, Shape};
pub use model::{flop_profile, FlopProfile, Model, Trace, TRAIN_FLOP_MULTIPLIER};
