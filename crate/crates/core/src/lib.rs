//! Joint user-network and topic embedding.
//!
//! Users and topics share one M-dimensional latent space. Each user's
//! documents draw logistic-normal topic proportions centred on `Φ u_i`, and
//! each user pair draws a Gaussian affinity centred on `u_iᵀ u_j` that is
//! squashed through the logistic function into an edge probability. The
//! posterior is fitted with mean-field variational EM.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the CLI uses.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod learning;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod synth;

#[doc(hidden)]
pub mod testutil;

pub use error::{JnetError, Result};
pub use scalar::Real;

pub type HyperParams = model::HyperParams<f64>;
pub type PosteriorState = model::PosteriorState<f64>;
pub type TopicWordDist = model::TopicWordDist<f64>;
pub type TrainedModel = model::TrainedModel<f64>;
pub type DocPosterior = model::DocPosterior<f64>;
pub type EStepConfig = inference::EStepConfig<f64>;
pub type TrainConfig = learning::TrainConfig<f64>;
pub type GroundTruth = synth::GroundTruth<f64>;

pub type HyperParams32 = model::HyperParams<f32>;
pub type PosteriorState32 = model::PosteriorState<f32>;
pub type TrainedModel32 = model::TrainedModel<f32>;
pub type TrainConfig32 = learning::TrainConfig<f32>;
