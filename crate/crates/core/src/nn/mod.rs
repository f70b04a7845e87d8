//! Small deterministic neural-network engine: MLPs with exact
//! backpropagation, Adam and Polyak averaging.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod params;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use mlp::{Activation, ForwardCache, InitScheme, Mlp, MlpSpec};
pub use params::{polyak_update, ParamStore, Tensor};
