//! Differentiable-network primitives: dense layers, fully-connected residual
//! blocks, softmax/cross-entropy, exact reverse-mode gradients with respect
//! to both the parameters and the input, and spectral normalization by
//! warm-started power iteration.
//!
//! The architecture is a linear input projection into feature space, a stack
//! of residual blocks `h ← h + W2·φ(W1·h + b1) + b2`, and a linear head. The
//! feature extractor is everything up to (excluding) the head. The backward
//! pass is hand-derived; a forward call records the tape needed to run any
//! backward without recomputation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::FeatureGMM;
use crate::error::{Error, Result};
use crate::tensor::{dot, norm2, Mat, Tensor};

/// Negative-side slope of the leaky rectifier. Strictly monotone with a
/// nonzero gradient everywhere, so input saliency never goes dead.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Guard added to the normalizers of the relative (normalized) gradient
/// combination: the class loss reaches 0 at the success boundary and the
/// target log-density crosses 0 whenever the density passes one.
pub const EPS_DIV: f64 = 1e-12;

#[inline]
fn lrelu(a: f64) -> f64 {
    if a >= 0.0 {
        a
    } else {
        LEAKY_SLOPE * a
    }
}

#[inline]
fn lrelu_grad(a: f64) -> f64 {
    if a >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// One dense layer plus its spectral-normalization state.
///
/// `sn_u` is the running left-singular-vector estimate (unit norm) used to
/// warm-start power iteration across calls.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub sn_u: Vec<f64>,
    pub sn_enabled: bool,
}

impl LayerParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        let mut sn_u = vec![0.0; out_dim];
        sn_u[0] = 1.0;
        Self {
            weight: Mat::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            sn_u,
            sn_enabled: true,
        }
    }

    pub fn random(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let mut weight = Mat::zeros(out_dim, in_dim);
        for v in weight.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        let mut sn_u: Vec<f64> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm2(&sn_u);
        if n > 0.0 {
            for v in &mut sn_u {
                *v /= n;
            }
        } else {
            sn_u[0] = 1.0;
        }
        Self {
            weight,
            bias: vec![0.0; out_dim],
            sn_u,
            sn_enabled: true,
        }
    }

    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.weight.matvec(x);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }

    /// Run `iters` power-iteration steps (warm-started from `sn_u`), then
    /// rescale the weight by `c/σ̂` if the estimated top singular value σ̂
    /// exceeds `c`. Never upscales. Returns σ̂ as estimated before any
    /// rescaling; a zero weight matrix is a no-op returning 0.
    pub fn normalize_spectral(&mut self, c: f64, iters: usize) -> f64 {
        assert!(c > 0.0 && iters >= 1);
        let mut u = self.sn_u.clone();
        let mut sigma = 0.0;
        for _ in 0..iters {
            let mut v = self.weight.matvec_t(&u);
            let nv = norm2(&v);
            if nv == 0.0 {
                return 0.0;
            }
            for x in &mut v {
                *x /= nv;
            }
            let wv = self.weight.matvec(&v);
            let nw = norm2(&wv);
            if nw == 0.0 {
                return 0.0;
            }
            u = wv.iter().map(|x| x / nw).collect();
            sigma = dot(&u, &wv);
        }
        self.sn_u = u;
        if sigma > c {
            self.weight.scale(c / sigma);
        }
        sigma
    }
}

/// Residual block `h ← h + contract(φ(expand(h)))`, identity skip.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    /// feature_dim → hidden_dim
    pub expand: LayerParams,
    /// hidden_dim → feature_dim
    pub contract: LayerParams,
}

/// Full network: projection into feature space, residual blocks, linear head.
///
/// The feature extractor is `proj` followed by `blocks`; the head maps
/// feature space to logits.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub proj: LayerParams,
    pub blocks: Vec<ResidualBlock>,
    pub head: LayerParams,
}

/// Everything recorded during a forward pass: enough to run any backward
/// pass without re-running the forward.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub input: Vec<f64>,
    pub proj_out: Vec<f64>,
    pub block_pre_act: Vec<Vec<f64>>,
    pub block_hidden: Vec<Vec<f64>>,
    pub block_input: Vec<Vec<f64>>,
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Per-layer gradient buffers, ordered as [`NetworkParams::layers`].
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        let layers = params
            .layers()
            .iter()
            .map(|l| LayerGrads {
                weight: Mat::zeros(l.weight.rows, l.weight.cols),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        Self { layers }
    }

    pub fn scale(&mut self, a: f64) {
        for l in &mut self.layers {
            l.weight.scale(a);
            for b in &mut l.bias {
                *b *= a;
            }
        }
    }
}

/// What scalar to differentiate with respect to the input.
///
/// `Weighted` is the gradient of the scalar `λ·ℓ_c − log p_t`. `Normalized`
/// is not the gradient of a scalar: it is the relative combination
/// `μ·∇ℓ_c/(ℓ_c+ε) − ∇log p_t/(|log p_t|+ε)` with the normalizers evaluated
/// at the query point (the absolute value on the density term because
/// `log p_t` can take either sign).
pub enum LossSpec<'a> {
    CrossEntropy {
        target: usize,
    },
    TargetLogDensity {
        gmm: &'a FeatureGMM,
        target: usize,
    },
    Weighted {
        gmm: &'a FeatureGMM,
        target: usize,
        lambda: f64,
    },
    Normalized {
        gmm: &'a FeatureGMM,
        target: usize,
        mu: f64,
    },
}

impl NetworkParams {
    /// Fresh random network; weights uniform, biases zero, SN state seeded.
    pub fn random(
        input_dim: usize,
        feature_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        num_blocks: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = LayerParams::random(feature_dim, input_dim, &mut rng);
        let blocks = (0..num_blocks)
            .map(|_| ResidualBlock {
                expand: LayerParams::random(hidden_dim, feature_dim, &mut rng),
                contract: LayerParams::random(feature_dim, hidden_dim, &mut rng),
            })
            .collect();
        let head = LayerParams::random(num_classes, feature_dim, &mut rng);
        Self {
            input_dim,
            feature_dim,
            hidden_dim,
            num_classes,
            proj,
            blocks,
            head,
        }
    }

    /// Layers in canonical order: proj, (expand, contract) per block, head.
    pub fn layers(&self) -> Vec<&LayerParams> {
        let mut v = Vec::with_capacity(2 + 2 * self.blocks.len());
        v.push(&self.proj);
        for b in &self.blocks {
            v.push(&b.expand);
            v.push(&b.contract);
        }
        v.push(&self.head);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LayerParams> {
        let mut v = Vec::with_capacity(2 + 2 * self.blocks.len());
        v.push(&mut self.proj);
        for b in &mut self.blocks {
            v.push(&mut b.expand);
            v.push(&mut b.contract);
        }
        v.push(&mut self.head);
        v
    }

    /// Normalize every SN-enabled layer; returns the largest σ̂ seen.
    pub fn normalize_spectral_all(&mut self, c: f64, iters: usize) -> f64 {
        let mut max_sigma: f64 = 0.0;
        for layer in self.layers_mut() {
            if layer.sn_enabled {
                max_sigma = max_sigma.max(layer.normalize_spectral(c, iters));
            }
        }
        max_sigma
    }

    /// Loose Lipschitz bound on the feature extractor: Π(1+c) over blocks.
    pub fn residual_lipschitz_bound(&self, c: f64) -> f64 {
        (1.0 + c).powi(self.blocks.len() as i32)
    }

    /// Forward pass producing logits, features, and the backward tape.
    ///
    /// The input must have `input_dim` pixels, each within [0,1].
    pub fn forward(&self, x: &[f64]) -> Result<ForwardRecord> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        for (i, &v) in x.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::PixelOutOfRange { index: i, value: v });
            }
        }

        let proj_out = self.proj.affine(x);
        let mut h = proj_out.clone();
        let mut block_pre_act = Vec::with_capacity(self.blocks.len());
        let mut block_hidden = Vec::with_capacity(self.blocks.len());
        let mut block_input = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            block_input.push(h.clone());
            let a = block.expand.affine(&h);
            let u: Vec<f64> = a.iter().map(|&v| lrelu(v)).collect();
            let r = block.contract.affine(&u);
            for (hi, ri) in h.iter_mut().zip(&r) {
                *hi += ri;
            }
            block_pre_act.push(a);
            block_hidden.push(u);
        }
        let features = h;
        let logits = self.head.affine(&features);

        if logits.iter().any(|v| !v.is_finite()) || features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "forward pass" });
        }

        Ok(ForwardRecord {
            input: x.to_vec(),
            proj_out,
            block_pre_act,
            block_hidden,
            block_input,
            features,
            logits,
        })
    }

    /// Reverse sweep from upstream gradients on the logits and (optionally,
    /// additively) on the features, down to the input. When `grads` is given,
    /// parameter gradients are accumulated into it.
    pub fn backward(
        &self,
        tape: &ForwardRecord,
        d_logits: &[f64],
        d_features: &[f64],
        mut grads: Option<&mut NetGrads>,
    ) -> Vec<f64> {
        let head_idx = 1 + 2 * self.blocks.len();

        // Head: logits = W_head · z + b_head.
        let mut d_z = self.head.weight.matvec_t(d_logits);
        for (dz, df) in d_z.iter_mut().zip(d_features) {
            *dz += df;
        }
        if let Some(g) = grads.as_deref_mut() {
            g.layers[head_idx]
                .weight
                .add_outer(d_logits, &tape.features, 1.0);
            for (b, d) in g.layers[head_idx].bias.iter_mut().zip(d_logits) {
                *b += d;
            }
        }

        // Blocks in reverse: h_out = h_in + W2·φ(W1·h_in + b1) + b2.
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let d_r = d_z.clone();
            let d_u = block.contract.weight.matvec_t(&d_r);
            let d_a: Vec<f64> = d_u
                .iter()
                .zip(&tape.block_pre_act[i])
                .map(|(du, &a)| du * lrelu_grad(a))
                .collect();
            let d_branch_in = block.expand.weight.matvec_t(&d_a);
            if let Some(g) = grads.as_deref_mut() {
                g.layers[2 + 2 * i]
                    .weight
                    .add_outer(&d_r, &tape.block_hidden[i], 1.0);
                for (b, d) in g.layers[2 + 2 * i].bias.iter_mut().zip(&d_r) {
                    *b += d;
                }
                g.layers[1 + 2 * i]
                    .weight
                    .add_outer(&d_a, &tape.block_input[i], 1.0);
                for (b, d) in g.layers[1 + 2 * i].bias.iter_mut().zip(&d_a) {
                    *b += d;
                }
            }
            for (dz, db) in d_z.iter_mut().zip(&d_branch_in) {
                *dz += db;
            }
        }

        // Projection.
        let d_x = self.proj.weight.matvec_t(&d_z);
        if let Some(g) = grads.as_deref_mut() {
            g.layers[0].weight.add_outer(&d_z, &tape.input, 1.0);
            for (b, d) in g.layers[0].bias.iter_mut().zip(&d_z) {
                *b += d;
            }
        }
        d_x
    }

    /// Exact input-space gradient of the requested objective.
    pub fn grad_input(&self, x: &[f64], spec: &LossSpec) -> Result<Tensor> {
        let tape = self.forward(x)?;
        let probs = softmax(&tape.logits);
        let zero_feat = vec![0.0; self.feature_dim];

        let d_x = match spec {
            LossSpec::CrossEntropy { target } => {
                let d_logits = ce_logit_grad(&probs, *target, 1.0, self.num_classes)?;
                self.backward(&tape, &d_logits, &zero_feat, None)
            }
            LossSpec::TargetLogDensity { gmm, target } => {
                check_feature_dims(self, gmm)?;
                let d_feat = gmm.grad_log_density_class(&tape.features, *target)?;
                let d_logits = vec![0.0; self.num_classes];
                self.backward(&tape, &d_logits, &d_feat, None)
            }
            LossSpec::Weighted {
                gmm,
                target,
                lambda,
            } => {
                check_feature_dims(self, gmm)?;
                let d_logits = ce_logit_grad(&probs, *target, *lambda, self.num_classes)?;
                let mut d_feat = gmm.grad_log_density_class(&tape.features, *target)?;
                for v in &mut d_feat {
                    *v = -*v;
                }
                self.backward(&tape, &d_logits, &d_feat, None)
            }
            LossSpec::Normalized { gmm, target, mu } => {
                check_feature_dims(self, gmm)?;
                let ce = cross_entropy(&tape.logits, *target)?;
                let logp = gmm.log_density_class(&tape.features, *target)?;
                // Backward is linear in its upstream gradients, so the two
                // normalized terms collapse into a single sweep.
                let d_logits =
                    ce_logit_grad(&probs, *target, mu / (ce + EPS_DIV), self.num_classes)?;
                let mut d_feat = gmm.grad_log_density_class(&tape.features, *target)?;
                let w = 1.0 / (logp.abs() + EPS_DIV);
                for v in &mut d_feat {
                    *v = -*v * w;
                }
                self.backward(&tape, &d_logits, &d_feat, None)
            }
        };

        let t = Tensor::from_vec(d_x);
        if !t.is_finite() {
            return Err(Error::NonFinite { what: "input gradient" });
        }
        Ok(t)
    }

    /// Gradient of the mean cross-entropy over a batch, for training.
    pub fn grad_params(&self, batch: &[Vec<f64>], labels: &[usize]) -> Result<NetGrads> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if batch.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "batch labels",
                expected: batch.len(),
                got: labels.len(),
            });
        }
        let mut grads = NetGrads::zeros_like(self);
        let zero_feat = vec![0.0; self.feature_dim];
        for (x, &t) in batch.iter().zip(labels) {
            let tape = self.forward(x)?;
            let probs = softmax(&tape.logits);
            let d_logits = ce_logit_grad(&probs, t, 1.0, self.num_classes)?;
            self.backward(&tape, &d_logits, &zero_feat, Some(&mut grads));
        }
        grads.scale(1.0 / batch.len() as f64);
        Ok(grads)
    }
}

fn check_feature_dims(params: &NetworkParams, gmm: &FeatureGMM) -> Result<()> {
    if gmm.dim() != params.feature_dim {
        return Err(Error::FeatureDimMismatch {
            model_dim: params.feature_dim,
            gmm_dim: gmm.dim(),
        });
    }
    Ok(())
}

/// d(scale · ℓ_c)/d logits = scale · (softmax − one_hot(target)).
fn ce_logit_grad(probs: &[f64], target: usize, scale: f64, num_classes: usize) -> Result<Vec<f64>> {
    if target >= num_classes {
        return Err(Error::ClassOutOfRange {
            class: target,
            class_count: num_classes,
        });
    }
    let mut d: Vec<f64> = probs.iter().map(|&p| scale * p).collect();
    d[target] -= scale;
    Ok(d)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// −log softmax(logits)[t] via log-sum-exp; stable for logits up to ~1e4 in
/// magnitude and never negative.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::ClassOutOfRange {
            class: target,
            class_count: logits.len(),
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[target])
}

/// Index of the maximum value; ties resolve to the lowest index.
pub fn argmax_tie_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
