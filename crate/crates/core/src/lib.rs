//! Few-shot metric classification over fixed embeddings.
//!
//! Each class is modelled as an anisotropic Gaussian whose covariance is
//! shrunk toward a structured target and normalized to unit diagonal;
//! test-time decisions use the squared Mahalanobis distance to learnable
//! class prototypes. Several prototypes per class are trained jointly with a
//! classification loss, an intra-class compactness loss, and a term that
//! spreads prototypes apart; their probabilities are averaged at test time.
//!
//! Inner loops (per-sample losses, per-class model construction, test-set
//! evaluation) run on rayon when the `parallel` feature is enabled and fall
//! back to sequential iteration otherwise. Results are identical either way.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod data;
pub mod error;
pub mod experiment;
pub mod feature;
pub mod gaussian;
pub mod linalg;
pub mod losses;
pub mod par;
pub mod presets;
pub mod rng;
pub mod trainer;

pub use classifier::{
    classify, ensemble_predict, predict_proba, DistanceMode, Prediction, PrototypeBank,
};
pub use data::{EmbeddingSet, FewShotTask, SyntheticSpec};
pub use error::{Error, Result};
pub use feature::FeatureVector;
pub use gaussian::{
    build_class_gaussian, estimate_covariance, estimate_mean, mahalanobis_sq, normalize_cov,
    shrink, ClassGaussian, ShrinkageConvention, ShrinkageParams,
};
pub use linalg::{Cholesky, SymMatrix};
pub use losses::{LossBreakdown, LossWeights};
pub use trainer::{cosine_lr, evaluate, init_model, train, TrainConfig, TrainedModel};
