//! Differentially private variational inference (DPVI).
//!
//! DP-SGD releases a clipped, noised sum of per-example gradients. When the
//! released vector concatenates gradients of variational means and scales,
//! the two blocks have very different magnitudes and the scale block drowns
//! in DP noise. This crate implements the vanilla estimator together with
//! estimators that address the imbalance:
//!
//! * **aligned** — privatize only the mean gradient and reconstruct the
//!   scale gradient from it in post-processing (no extra privacy cost),
//! * **preconditioned** — rescale the scale gradient before privatization,
//! * **natural** / **aligned-natural** — precondition with the inverse
//!   Fisher information of the Gaussian guide,
//! * **full-rank vanilla / aligned** — the same machinery for a full-rank
//!   Gaussian guide parametrized by a packed Cholesky factor.
//!
//! On top of the training loop the crate provides post-hoc trace analysis:
//! a linear-regression convergence check, iterate averaging, DP-noise
//! variance estimation and noise-aware posterior construction, validated
//! against an Ornstein-Uhlenbeck model of the stationary iterate dynamics.
//!
//! Privacy is tracked with a Rényi-DP accountant for the Poisson-subsampled
//! Gaussian mechanism. RDP gives a slightly conservative epsilon compared
//! to numerical accountants working on the privacy loss distribution.

pub mod dataio;
pub mod error;
pub mod gradest;
pub mod guide;
pub mod harness;
pub mod models;
pub mod privacy;
pub mod rng;
pub mod traceanalysis;
pub mod trainer;
pub mod transforms;

pub use error::{DpviError, Result};
pub use gradest::{EstimatorVariant, PerExampleBatch, UpdateGradient};
pub use guide::{DiagonalGuide, FullRankGuide, Guide};
pub use models::{Dataset, Model};
pub use privacy::{DpSgdConfig, PrivacySpend};
pub use trainer::{AdamState, Trace};
pub use transforms::TransformKind;
