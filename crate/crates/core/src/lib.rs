//! Kolmogorov–Arnold and MLP surrogates for power-system swing dynamics,
//! trained against data and the swing-equation residual.

pub mod diff;
pub mod experiment;
pub mod grid;
pub mod kan;
pub mod metrics;
pub mod mlp;
pub mod network;
pub mod simulator;
pub mod splines;
pub mod trainer;

pub use grid::GridModel;
pub use kan::KanNetwork;
pub use mlp::MlpNetwork;
pub use network::{Network, Surrogate};
pub use splines::SplineSpec;
