//! Gaussian copula with graph-structured precision.
//!
//! The joint density of node outcomes factors into a Gaussian copula density,
//! whose correlation comes from a sparse precision matrix `K` sharing the graph's
//! sparsity pattern, and per-node marginal densities.

mod density;
mod discrete;
mod inference;
mod precision;

pub use density::{copula_log_density, correlation, correlation_matrix, nll_loss, NllParts};
pub use discrete::{bivariate_normal_cdf, exact_bivariate_discrete_pmf, gaussian_copula_cdf};
pub use inference::{conditional_posterior, infer_sample, CopulaPosterior, COND_JITTER};
pub use precision::{PrecisionInputs, PrecisionKind, PrecisionModel, ALPHA_BOUND};
