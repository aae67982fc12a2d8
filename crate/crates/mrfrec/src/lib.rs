//! Collaborative filtering with sparse Markov random fields.
//!
//! The engine treats every observed rating as a discrete variable over
//! `{1..K}` and learns an MRF over the whole rating database: item-item and
//! user-user interaction weights are estimated jointly with per-user/per-item
//! biases under an ℓ1 penalty, by pseudo-likelihood or contrastive divergence.
//! Prediction uses each cell's local conditional given its observed neighbors,
//! which yields calibrated probabilities (confidence, log-likelihood, entropy
//! novelty) alongside point estimates. Classic baselines — means, a
//! variance-weighted mean, user k-NN, and a latent-factor model with learned
//! heteroscedastic variance — ship with the same evaluation harness.
//!
//! Start with the `examples/` directory: each example is a runnable tour of
//! one capability (ingestion, exact inference on tiny models, training,
//! baselines, ranking, graph export). A thin `mrfrec` binary wraps the same
//! library for batch experiment pipelines.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod harness;
pub mod inference;
pub mod learning;
pub mod model;
pub mod normalize;
pub mod synth;

pub use data::{
    chronological_split, filter_infrequent, parse_ratings, RatingDataset, RatingTriple,
    RatingsFormat, SplitBundle,
};
pub use model::{
    ModelParams, ModelScope, PairMap, Parameterization, PredictiveDistribution,
};
pub use normalize::NormalizationStats;
