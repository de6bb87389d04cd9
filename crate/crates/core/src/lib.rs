//! Zero-shot classification that fuses image-conditioned and
//! caption-conditioned class probabilities.
//!
//! The engine works on precomputed embeddings stored in `ICEB` bundles
//! ([`bundle`]). For each image it scores the image embedding and the
//! centroid of its caption embeddings against per-class text prototypes
//! ([`prototypes`]), then re-ranks the Top-K image classes with a
//! confidence-weighted caption term ([`fusion`]). [`eval`] aggregates
//! accuracy, reclassification quadrants and ablation sweeps.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`, which is what the evaluation harness uses.

pub mod bundle;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod prototypes;
pub mod scalar;
pub mod synth;

pub use bundle::{read_bundle, write_bundle, DatasetManifest, EmbeddingBundle};
pub use error::{IceError, Result};
pub use eval::{ablate, evaluate, evaluate_with, AblationAxis, AblationGrid, AxisValue, EvalOptions, EvalReport, Method, MethodKind};
pub use fusion::{IceConfig, LambdaMode};
pub use prototypes::Reduction;
pub use scalar::Scalar;
pub use synth::{synth_bundle, SynthSpec};

pub type Embedding = embed::EmbeddingVector<f64>;
pub type Embedding32 = embed::EmbeddingVector<f32>;
pub type Scores = embed::ScoreDistribution<f64>;
pub type Scores32 = embed::ScoreDistribution<f32>;
pub type Prototypes = prototypes::ClassPrototypeSet<f64>;
pub type Prototypes32 = prototypes::ClassPrototypeSet<f32>;
pub type Prediction = fusion::IcePrediction<f64>;
