//! Interaction blocks: the sparse rolling product, the gated residual update
//! that injects it, and the cross-scale, self-interaction and energy blocks
//! built from them.

mod cross;
mod energy;
mod fusion;
mod rolling;
mod self_block;

pub use cross::CrossBlock;
pub use energy::EnergyGate;
pub use fusion::GatedFusion;
pub use rolling::{
    rolling_features, rolling_features_backward, rolling_features_naive, shift_set, RollingConfig,
    SparseRollingProduct,
};
pub use self_block::SelfBlock;

/// Initial value of every layer-scale vector.
pub const LAYER_SCALE_INIT: f64 = 1e-5;
