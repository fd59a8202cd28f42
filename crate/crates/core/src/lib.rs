//! Simulation laboratory for preference learning when the feedback channel is
//! systematically biased on a hidden slice of the context space.
//!
//! The library has three layers:
//!
//! * **Closed forms** ([`bounds`]): the per-hit information rate
//!   `kappa(eps) = 4·eps·atanh(2·eps)`, the testing-error floor
//!   `(gamma/4)·exp(-n·alpha·kappa)`, and the query budgets of the routed
//!   majority and sequential tests.
//! * **Simulation** ([`env`], [`channel`], [`protocols`], [`diagnostics`]):
//!   a two-world Gaussian-mixture environment, a Massart-biased pairwise
//!   label channel, executable query protocols with transcript-level KL
//!   accounting, a logistic preference learner, and the D1–D3 diagnostics.
//! * **Measure calculus** ([`tilting`], [`maps`]): exponential tilting over
//!   finite-support measures (log-partition, covariance identities,
//!   I-projection) and score-shaping interventions that cancel first-order
//!   drift of hard-set mass.
//!
//! All randomness flows through explicit [`rng::RngStream`] values; batch
//! estimators derive one substream per trial so results are bit-identical
//! regardless of thread count.

pub mod bounds;
pub mod channel;
pub mod config;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod fit;
pub mod maps;
pub mod measure;
pub mod multiobjective;
pub mod protocols;
pub mod rng;
pub mod score;
pub mod stats;
pub mod tilting;

pub use error::{Error, Result};
