//! Verification tools: distortion of a sketched VJP, the variance
//! propagation identity on linear chains, and the iteration/cost trade-off.

mod decomposition;
mod distortion;
mod tradeoff;

pub use decomposition::{variance_decomposition_check, DecompositionLevel, DecompositionReport, LinearChain};
pub use distortion::{analytic_distortion, estimate_distortion, DistortionReport, MIN_DRAWS};
pub use tradeoff::TradeoffParams;
