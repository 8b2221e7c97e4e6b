mod config;
mod lattice;
mod mask;
mod model;
mod params;

pub use config::ModelConfig;
pub use lattice::{bpc, lattice_log_marginal, EdgeLattice};
pub use mask::build_segmental_mask;
pub use model::{BatchLoss, Mode, Mslm};
#[allow(unused_imports)]
pub(crate) use model::splitmix64;
pub use params::{param_specs, MslmParams};

#[cfg(test)]
mod tests;
