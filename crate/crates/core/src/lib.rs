//! Training linear tag classifiers from noisy, user-supplied tags.
//!
//! Uploader tags omit most of what is actually in an image, so treating
//! them as clean labels penalizes correct confident predictions. This
//! crate models the omission explicitly: a latent true label drives a
//! logistic score, and a per-tag tagging likelihood (plus an optional
//! spurious-tag rate) links it to the observed tag. Models train with
//! Stochastic EM at minibatch scale, calibrate their intercepts on small
//! curated sets, and are scored under per-image tag prediction, per-tag
//! annotation, and multi-tag retrieval protocols.

pub mod bundle;
pub mod calibrate;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod train;

pub use bundle::ModelBundle;
pub use error::{Error, Result};
pub use model::{FeatureVector, LabeledBatch, TagModel};
pub use train::{GammaMode, SufficientStats, TrainConfig};
