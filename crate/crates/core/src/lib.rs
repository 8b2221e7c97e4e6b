pub mod backend;
pub mod corpus;
pub mod embed_init;
pub mod error;
pub mod eval;
mod kv;
pub mod mslm;
pub mod scalar;
pub mod segmentation;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;
pub use segmentation::{BoundaryVector, Segmentation};

pub type Tensor32 = backend::Tensor<f32>;
pub type Tensor64 = backend::Tensor<f64>;
pub type Mslm32 = mslm::Mslm<f32>;
pub type Mslm64 = mslm::Mslm<f64>;
pub type EdgeLattice32 = mslm::EdgeLattice<f32>;
pub type EdgeLattice64 = mslm::EdgeLattice<f64>;
pub type Checkpoint32 = train::Checkpoint<f32>;
pub type Checkpoint64 = train::Checkpoint<f64>;
