//! Full-run JSON configuration: sections `data`, `train`, `gmm`, `search`,
//! and `benchmark`. Every field has a default; unknown keys are rejected so
//! typos never pass silently; range violations name the offending key.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::WachterConfig;
use crate::classifier::TrainConfig;
use crate::data::SyntheticSpec;
use crate::density::FitOptions;
use crate::engine::{GradientMode, SearchConfig};
use crate::error::{Error, Result};
use crate::eval::BenchmarkSpec;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub train: TrainSection,
    pub gmm: GmmSection,
    pub search: SearchSection,
    pub benchmark: BenchmarkSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// "synthetic" or "idx".
    pub kind: String,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub samples_per_class: usize,
    pub jitter: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// IDX image/label paths, used when kind = "idx".
    pub images: Option<String>,
    pub labels: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            kind: "synthetic".into(),
            height: s.height,
            width: s.width,
            classes: s.classes,
            samples_per_class: s.samples_per_class,
            jitter: s.jitter,
            noise_std: s.noise_std,
            seed: s.seed,
            images: None,
            labels: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub sn_coefficient: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            momentum: c.momentum_sgd,
            sn_coefficient: c.sn_coefficient,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmSection {
    /// Relative diagonal jitter: eps = jitter_rel · trace(Σ)/dim.
    pub jitter_rel: f64,
    /// Absolute jitter floor.
    pub jitter_floor: f64,
}

impl Default for GmmSection {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            jitter_rel: o.jitter_rel,
            jitter_floor: o.jitter_floor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    /// γ: target confidence.
    pub gamma: f64,
    /// δ: per-pixel step size.
    pub delta: f64,
    pub pixels_per_step: usize,
    pub per_pixel_cap: usize,
    pub max_iter: usize,
    /// "normalized" (μ) or "weighted" (λ).
    pub gradient_mode: String,
    pub mu: f64,
    pub lambda: Option<f64>,
    pub momentum: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        let c = SearchConfig::default();
        Self {
            gamma: c.target_confidence,
            delta: c.step_size,
            pixels_per_step: c.pixels_per_step,
            per_pixel_cap: c.per_pixel_cap,
            max_iter: c.max_iter,
            gradient_mode: "normalized".into(),
            mu: 1.0,
            lambda: None,
            momentum: c.momentum,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub num_sets: usize,
    pub images_per_set: usize,
    pub seed: u64,
    pub workers: usize,
    pub generators: Vec<String>,
    pub dump_images: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let s = BenchmarkSpec::default();
        Self {
            num_sets: s.num_sets,
            images_per_set: s.images_per_set,
            seed: s.seed,
            workers: s.workers,
            generators: vec!["deduce".into(), "jsma".into(), "wachter".into()],
            dump_images: false,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

impl RunConfig {
    /// Parse and validate a JSON document; an empty object yields all
    /// defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::ConfigParse(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.kind.as_str() {
            "synthetic" | "idx" => {}
            other => return Err(bad("data.kind", format!("unknown kind {other:?}"))),
        }
        if self.data.kind == "idx" && (self.data.images.is_none() || self.data.labels.is_none()) {
            return Err(bad("data.images", "idx data needs images and labels paths"));
        }
        if self.data.height == 0 || self.data.width == 0 {
            return Err(bad("data.height", "image size must be positive"));
        }
        if self.data.classes < 2 {
            return Err(bad("data.classes", "need at least 2 classes"));
        }
        if self.data.samples_per_class == 0 {
            return Err(bad("data.samples_per_class", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.data.noise_std) {
            return Err(bad("data.noise_std", "must be in [0,1]"));
        }
        if self.train.epochs == 0 {
            return Err(bad("train.epochs", "must be positive"));
        }
        if self.train.batch_size == 0 {
            return Err(bad("train.batch_size", "must be at least 1"));
        }
        if self.train.learning_rate <= 0.0 {
            return Err(bad("train.learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            return Err(bad("train.momentum", "must be in [0,1)"));
        }
        if self.train.sn_coefficient <= 0.0 {
            return Err(bad("train.sn_coefficient", "must be > 0"));
        }
        if self.gmm.jitter_rel < 0.0 {
            return Err(bad("gmm.jitter_rel", "must be >= 0"));
        }
        if self.gmm.jitter_floor < 0.0 {
            return Err(bad("gmm.jitter_floor", "must be >= 0"));
        }
        if !(0.0 < self.search.gamma && self.search.gamma < 1.0) {
            return Err(bad("search.gamma", "must be in (0,1)"));
        }
        if self.search.delta <= 0.0 {
            return Err(bad("search.delta", "must be > 0"));
        }
        if self.search.pixels_per_step == 0 {
            return Err(bad("search.pixels_per_step", "must be at least 1"));
        }
        if self.search.per_pixel_cap == 0 {
            return Err(bad("search.per_pixel_cap", "must be at least 1"));
        }
        if self.search.max_iter == 0 {
            return Err(bad("search.max_iter", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.search.momentum) {
            return Err(bad("search.momentum", "must be in [0,1)"));
        }
        match self.search.gradient_mode.as_str() {
            "normalized" => {
                if self.search.mu < 0.0 {
                    return Err(bad("search.mu", "must be >= 0"));
                }
            }
            "weighted" => {
                if self.search.lambda.is_some_and(|l| l < 0.0) {
                    return Err(bad("search.lambda", "must be >= 0"));
                }
            }
            other => {
                return Err(bad(
                    "search.gradient_mode",
                    format!("unknown mode {other:?} (expected \"normalized\" or \"weighted\")"),
                ))
            }
        }
        if self.benchmark.num_sets == 0 {
            return Err(bad("benchmark.num_sets", "must be at least 1"));
        }
        if self.benchmark.images_per_set == 0 {
            return Err(bad("benchmark.images_per_set", "must be at least 1"));
        }
        if self.benchmark.generators.is_empty() {
            return Err(bad("benchmark.generators", "must name at least one"));
        }
        for g in &self.benchmark.generators {
            match g.as_str() {
                "deduce" | "jsma" | "wachter" => {}
                other => {
                    return Err(bad(
                        "benchmark.generators",
                        format!("unknown generator {other:?}"),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            height: self.data.height,
            width: self.data.width,
            classes: self.data.classes,
            samples_per_class: self.data.samples_per_class,
            jitter: self.data.jitter,
            noise_std: self.data.noise_std,
            seed: self.data.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            momentum_sgd: self.train.momentum,
            sn_coefficient: self.train.sn_coefficient,
            seed: self.train.seed,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            jitter_rel: self.gmm.jitter_rel,
            jitter_floor: self.gmm.jitter_floor,
        }
    }

    /// Exactly one of the μ / λ modes is active, picked by `gradient_mode`.
    pub fn search_config(&self) -> SearchConfig {
        let gradient_mode = match self.search.gradient_mode.as_str() {
            "weighted" => GradientMode::Weighted {
                lambda: self.search.lambda.unwrap_or(1.0),
            },
            _ => GradientMode::Normalized { mu: self.search.mu },
        };
        SearchConfig {
            target_confidence: self.search.gamma,
            step_size: self.search.delta,
            pixels_per_step: self.search.pixels_per_step,
            per_pixel_cap: self.search.per_pixel_cap,
            max_iter: self.search.max_iter,
            momentum: self.search.momentum,
            gradient_mode,
        }
    }

    pub fn wachter_config(&self) -> WachterConfig {
        WachterConfig {
            target_confidence: self.search.gamma,
            ..Default::default()
        }
    }

    pub fn benchmark_spec(&self) -> BenchmarkSpec {
        BenchmarkSpec {
            num_sets: self.benchmark.num_sets,
            images_per_set: self.benchmark.images_per_set,
            seed: self.benchmark.seed,
            workers: self.benchmark.workers,
        }
    }

    /// Canonical JSON echo of the effective configuration.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_else(|_| "{}".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.data.kind, "synthetic");
        assert_eq!(cfg.data.height, 12);
        assert_eq!(cfg.search.delta, 0.1);
        assert_eq!(cfg.search.max_iter, 700);
        assert_eq!(cfg.search.per_pixel_cap, 10);
        assert_eq!(cfg.search.momentum, 0.6);
        assert_eq!(cfg.benchmark.num_sets, 2);
        assert_eq!(cfg.benchmark.images_per_set, 50);
        assert_eq!(cfg.train.sn_coefficient, 0.95);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"serach": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"search": {"detla": 0.1}}"#).is_err());
    }

    #[test]
    fn range_error_names_the_key() {
        let err = RunConfig::from_json(r#"{"search": {"delta": -1}}"#).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "search.delta"),
            other => panic!("expected config error, got {other:?}"),
        }
        let err = RunConfig::from_json(r#"{"train": {"momentum": 1.5}}"#).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "train.momentum"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradient_mode_selects_exactly_one_weighting() {
        let normalized = RunConfig::from_json(r#"{"search": {"mu": 2.0}}"#).unwrap();
        assert!(matches!(
            normalized.search_config().gradient_mode,
            GradientMode::Normalized { mu } if mu == 2.0
        ));
        let weighted = RunConfig::from_json(
            r#"{"search": {"gradient_mode": "weighted", "lambda": 10.0}}"#,
        )
        .unwrap();
        assert!(matches!(
            weighted.search_config().gradient_mode,
            GradientMode::Weighted { lambda } if lambda == 10.0
        ));
        assert!(RunConfig::from_json(r#"{"search": {"gradient_mode": "both"}}"#).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_json(r#"{"search": {"delta": 0.25}}"#).unwrap();
        let echoed = RunConfig::from_json(&cfg.echo()).unwrap();
        assert_eq!(echoed.search.delta, 0.25);
        assert_eq!(echoed.benchmark.generators, cfg.benchmark.generators);
    }
}
