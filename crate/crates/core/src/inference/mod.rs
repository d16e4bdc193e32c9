//! Simplified nested-Laplace fitting plus an MCMC reference backend.

pub mod laplace;
pub mod mcmc;
pub mod optimize;
pub mod sampling;

pub use laplace::{conditional_mode, evaluate, log_marginal, GaussianApprox, Kriging, LaplaceEval, ModeOptions};
pub use mcmc::{mcmc_reference, McmcOptions, McmcResult};
pub use optimize::{optimize_hyper, OptimizeOptions, OptimizeResult, TracePoint};
pub use sampling::{draw_posterior, draw_posterior_grid, GridOptions, GridPoint, PosteriorDraws, DEFAULT_DRAWS};
