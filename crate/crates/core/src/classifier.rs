//! Trains, evaluates, and serves the spectral-normalized residual classifier.
//!
//! Architecture is fixed at desk scale: a linear projection into a 32-d
//! feature space, three residual blocks of hidden width 64, and a linear
//! head. Training is plain SGD with momentum on the mean cross-entropy, with
//! one warm-started power-iteration normalization after every step and a
//! 50-iteration pass at the end.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{argmax_tie_lowest, cross_entropy, softmax, NetGrads, NetworkParams};
use crate::tensor::Tensor;

pub const FEATURE_DIM: usize = 32;
pub const HIDDEN_DIM: usize = 64;
pub const NUM_BLOCKS: usize = 3;
/// Spectral cap strictly below one, so the bound check is unambiguous under
/// floating point.
pub const DEFAULT_SN_COEFFICIENT: f64 = 0.95;

/// Power iterations for the settling pass at initialization and the final
/// pass after training; per-step normalization warm-starts with one.
const SN_FINAL_ITERS: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum_sgd: f64,
    pub sn_coefficient: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.05,
            momentum_sgd: 0.9,
            sn_coefficient: DEFAULT_SN_COEFFICIENT,
            seed: 42,
        }
    }
}

/// An immutable trained classifier; safe to share across threads.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: NetworkParams,
    pub class_count: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub predicted_class: usize,
}

/// Deterministic 80/20 split: indices shuffled by a ChaCha stream derived
/// from the seed, first 80% train.
pub fn split_dataset(dataset: &LabeledDataset, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let cut = (dataset.len() * 4) / 5;
    let take = |ids: &[usize]| LabeledDataset {
        images: ids.iter().map(|&i| dataset.images[i].clone()).collect(),
        labels: ids.iter().map(|&i| dataset.labels[i]).collect(),
        height: dataset.height,
        width: dataset.width,
        class_count: dataset.class_count,
    };
    (take(&idx[..cut]), take(&idx[cut..]))
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn accuracy(params: &NetworkParams, images: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &l) in images.iter().zip(labels) {
        let tape = params.forward(x)?;
        if argmax_tie_lowest(&tape.logits) == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len().max(1) as f64)
}

/// SGD + momentum on mean cross-entropy with per-step spectral normalization.
///
/// Deterministic given the seed: the split, the weight init, and the epoch
/// shuffles all derive from it. A non-finite batch loss aborts with the step
/// index.
pub fn train(dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    if dataset.class_count < 2 {
        return Err(Error::DatasetTooSmall {
            msg: format!("need at least 2 classes, have {}", dataset.class_count),
        });
    }
    for class in 0..dataset.class_count {
        let n = dataset.labels.iter().filter(|&&l| l == class).count();
        if n < cfg.batch_size {
            return Err(Error::DatasetTooSmall {
                msg: format!(
                    "class {class} has {n} samples, need at least batch_size ({})",
                    cfg.batch_size
                ),
            });
        }
    }

    let (train_set, test_set) = split_dataset(dataset, cfg.seed);
    let mut params = NetworkParams::random(
        dataset.input_dim(),
        FEATURE_DIM,
        HIDDEN_DIM,
        dataset.class_count,
        NUM_BLOCKS,
        cfg.seed.wrapping_add(1),
    );
    // Settle the power-iteration state before the first step so the very
    // first normalization already has an accurate estimate.
    params.normalize_spectral_all(cfg.sn_coefficient, SN_FINAL_ITERS);

    let mut velocity = NetGrads::zeros_like(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<f64>> =
                chunk.iter().map(|&i| train_set.images[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();

            let mut loss = 0.0;
            let mut grads = NetGrads::zeros_like(&params);
            let zero_feat = vec![0.0; params.feature_dim];
            for (x, &t) in batch.iter().zip(&labels) {
                let tape = params.forward(x)?;
                loss += cross_entropy(&tape.logits, t)?;
                let probs = softmax(&tape.logits);
                let mut d_logits = probs;
                d_logits[t] -= 1.0;
                params.backward(&tape, &d_logits, &zero_feat, Some(&mut grads));
            }
            loss /= batch.len() as f64;
            grads.scale(1.0 / batch.len() as f64);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }

            for (v, g) in velocity.layers.iter_mut().zip(&grads.layers) {
                for (vv, gv) in v.weight.data_mut().iter_mut().zip(g.weight.data()) {
                    *vv = cfg.momentum_sgd * *vv + gv;
                }
                for (vb, gb) in v.bias.iter_mut().zip(&g.bias) {
                    *vb = cfg.momentum_sgd * *vb + gb;
                }
            }
            for (layer, v) in params.layers_mut().into_iter().zip(&velocity.layers) {
                for (w, vv) in layer.weight.data_mut().iter_mut().zip(v.weight.data()) {
                    *w -= cfg.learning_rate * vv;
                }
                for (b, vb) in layer.bias.iter_mut().zip(&v.bias) {
                    *b -= cfg.learning_rate * vb;
                }
            }
            params.normalize_spectral_all(cfg.sn_coefficient, 1);
            step += 1;
        }
    }
    params.normalize_spectral_all(cfg.sn_coefficient, SN_FINAL_ITERS);

    let train_accuracy = accuracy(&params, &train_set.images, &train_set.labels)?;
    let test_accuracy = accuracy(&params, &test_set.images, &test_set.labels)?;
    Ok(TrainedModel {
        params,
        class_count: dataset.class_count,
        train_accuracy,
        test_accuracy,
    })
}

/// Softmax probabilities plus the argmax class (lowest index on ties).
pub fn predict(model: &TrainedModel, x: &[f64]) -> Result<Prediction> {
    let tape = model.params.forward(x)?;
    let probs = softmax(&tape.logits);
    let predicted_class = argmax_tie_lowest(&probs);
    Ok(Prediction {
        probs,
        predicted_class,
    })
}

/// The feature extractor output: the network up to (excluding) the head.
pub fn extract_features(model: &TrainedModel, x: &[f64]) -> Result<Tensor> {
    let tape = model.params.forward(x)?;
    Ok(Tensor::from_vec(tape.features))
}

/// Per-sample features for a whole batch, in input order.
pub fn extract_features_batch(model: &TrainedModel, images: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    images
        .iter()
        .map(|x| Ok(model.params.forward(x)?.features))
        .collect()
}
