//! End-to-end glue shared by the CLI and the test suites: build the dataset
//! described by a config, train, fit the feature mixture on the training
//! split, and hand everything to the benchmark harness.

use std::path::Path;

use crate::classifier::{extract_features_batch, split_dataset, train, TrainedModel};
use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_idx, LabeledDataset};
use crate::density::FeatureGMM;
use crate::error::{Error, Result};
use crate::eval::nll_percentile;

/// Everything a benchmark or explain run needs.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub model: TrainedModel,
    pub gmm: FeatureGMM,
    pub train_set: LabeledDataset,
    pub test_set: LabeledDataset,
}

/// Materialize the dataset named by the config (synthetic glyphs or IDX
/// files).
pub fn build_dataset(cfg: &RunConfig) -> Result<LabeledDataset> {
    match cfg.data.kind.as_str() {
        "synthetic" => generate_synthetic(&cfg.synthetic_spec()),
        "idx" => {
            let images = cfg.data.images.as_ref().ok_or_else(|| Error::Config {
                key: "data.images".into(),
                msg: "required for idx data".into(),
            })?;
            let labels = cfg.data.labels.as_ref().ok_or_else(|| Error::Config {
                key: "data.labels".into(),
                msg: "required for idx data".into(),
            })?;
            load_idx(Path::new(images), Path::new(labels))
        }
        other => Err(Error::Config {
            key: "data.kind".into(),
            msg: format!("unknown kind {other:?}"),
        }),
    }
}

/// Fit the per-class feature Gaussians on the training split and record the
/// 95th-percentile training NLL used as the in-distribution threshold.
pub fn fit_gmm(cfg: &RunConfig, model: &TrainedModel, train_set: &LabeledDataset) -> Result<FeatureGMM> {
    let features = extract_features_batch(model, &train_set.images)?;
    let mut gmm = FeatureGMM::fit_with(
        &features,
        &train_set.labels,
        train_set.class_count,
        &cfg.fit_options(),
    )?;
    let p95 = nll_percentile(model, &gmm, &train_set.images, 0.95)?;
    gmm.set_nll_p95(p95);
    Ok(gmm)
}

/// Dataset → split → train → fit mixture.
pub fn prepare(cfg: &RunConfig) -> Result<Artifacts> {
    let dataset = build_dataset(cfg)?;
    let (train_set, test_set) = split_dataset(&dataset, cfg.train.seed);
    let model = train(&dataset, &cfg.train_config())?;
    let gmm = fit_gmm(cfg, &model, &train_set)?;
    Ok(Artifacts {
        model,
        gmm,
        train_set,
        test_set,
    })
}
