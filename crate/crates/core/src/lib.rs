//! Semantic variational Bayes.
//!
//! Solves latent distributions `P(y)` from an observed `P(x)` and semantic
//! constraints (truth, similarity, distortion or likelihood functions) with the
//! minimum-mutual-information iteration, fits Gaussian mixtures with EM and
//! EnM, and optimizes goal-oriented control under fuzzy targets.
//!
//! All routines are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases cover the common case.

// `!(x > 0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraint;
pub mod control;
pub mod error;
pub mod fit;
pub mod info;
pub mod mixture;
pub mod prob;
pub mod rate;
pub mod scalar;

pub use constraint::{ConstraintKind, ConstraintSpec, Form};
pub use error::{Result, SvbError};
pub use info::InfoReport;
pub use prob::{Channel, Distribution, Grid, MaxNormalized, Orientation, SemanticChannel};
pub use scalar::Real;

pub type Grid64 = Grid<f64>;
pub type Distribution64 = Distribution<f64>;
pub type Channel64 = Channel<f64>;
pub type SemanticChannel64 = SemanticChannel<f64>;
pub type MixtureState64 = mixture::MixtureState<f64>;
pub type GaussianParams64 = mixture::GaussianParams<f64>;
pub type ControlProblem64 = control::ControlProblem<f64>;
pub type ControlSolution64 = control::ControlSolution<f64>;
pub type RgPoint64 = rate::RgPoint<f64>;
pub type InfoReport64 = InfoReport<f64>;
