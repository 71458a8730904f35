//! Counterfactual explanations for a spectral-normalized residual classifier.
//!
//! The pieces, bottom up:
//!
//! - [`nn`]: dense/residual layers with exact hand-derived reverse-mode
//!   gradients and spectral normalization by power iteration.
//! - [`classifier`]: training, prediction, and the feature extractor.
//! - [`density`]: the class-conditional Gaussian mixture over feature space;
//!   its negative log-likelihood is the epistemic-uncertainty score and the
//!   realism proxy.
//! - [`engine`]: the saliency-guided pixel search that walks an input across
//!   the decision boundary while pulling its features toward the target
//!   class density.
//! - [`baselines`]: JSMA and the λ-schedule distance-penalized search.
//! - [`eval`]: the benchmark harness, CSV ledger, and report rendering.
//! - [`data`] / [`config`] / [`checkpoint`]: dataset and file formats.

pub mod baselines;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod data;
pub mod density;
pub mod engine;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod tensor;

pub use baselines::{jsma_generate, wachter_generate, DistanceMetric, WachterConfig};
pub use classifier::{
    extract_features, extract_features_batch, predict, split_dataset, train, Prediction,
    TrainConfig, TrainedModel,
};
pub use config::RunConfig;
pub use data::{generate_synthetic, load_idx, write_pgm, LabeledDataset, SyntheticSpec};
pub use density::{FeatureGMM, FitOptions};
pub use engine::{
    combined_gradient, generate, momentum_gradient, select_q_largest_masked, CounterfactualResult,
    GradientMode, SearchConfig,
};
pub use error::{Error, ErrorClass, Result};
pub use eval::{
    ablation_report, compute_metrics, l0_distance, l1_distance, realism_score, run_benchmark,
    BenchmarkRun, BenchmarkSpec, GeneratorConfig, LedgerRow, MetricsRow,
};
pub use nn::{cross_entropy, softmax, LayerParams, LossSpec, NetworkParams};
pub use pipeline::{build_dataset, fit_gmm, prepare, Artifacts};
pub use tensor::{Mat, Tensor};
