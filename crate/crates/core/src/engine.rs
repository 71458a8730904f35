//! Saliency-guided counterfactual search.
//!
//! The loop: while the target-class softmax output stays at or below the
//! target confidence and the iteration cap is not reached, compute the
//! combined gradient in input space, add momentum, pick the most salient
//! still-budgeted pixels, step each by ±δ, clip to [0,1], and count the
//! updates per pixel.
//!
//! Orientation contract: [`combined_gradient`] returns the DESCENT direction
//! of the combined objective (class loss weighted against target-class
//! feature density), so the per-pixel update `x[i] += sign(g[i])·δ` lowers
//! the class loss and raises the target density. Callers must not negate it.

use serde::{Deserialize, Serialize};

use crate::classifier::{predict, TrainedModel};
use crate::density::FeatureGMM;
use crate::error::{Error, Result};
use crate::eval::l0_distance;
use crate::nn::LossSpec;

/// Which combined objective drives the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Gradient of the scalar `λ·ℓ_c − log p_t`.
    Weighted { lambda: f64 },
    /// Relative combination `μ·∇ℓ_c/ℓ_c − ∇log p_t/|log p_t|`: each term is
    /// scaled by how much relative difference a step makes to it.
    Normalized { mu: f64 },
    /// Class loss alone, no density term and no normalization. This is the
    /// saliency-attack configuration used by the JSMA baseline.
    ClassLossOnly,
}

/// All knobs of the pixel search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchConfig {
    /// γ: stop once the target-class softmax output exceeds this.
    pub target_confidence: f64,
    /// δ: per-pixel step in [0,1] pixel units.
    pub step_size: f64,
    /// m: pixels updated per iteration.
    pub pixels_per_step: usize,
    /// p: per-pixel update budget.
    pub per_pixel_cap: usize,
    pub max_iter: usize,
    /// Momentum coefficient on the combined gradient; 0 disables it.
    pub momentum: f64,
    pub gradient_mode: GradientMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            target_confidence: 0.5,
            step_size: 0.1,
            pixels_per_step: 1,
            per_pixel_cap: 10,
            max_iter: 700,
            momentum: 0.6,
            gradient_mode: GradientMode::Normalized { mu: 1.0 },
        }
    }
}

/// Outcome of one search run.
#[derive(Debug, Clone)]
pub struct CounterfactualResult {
    pub image: Vec<f64>,
    pub success: bool,
    pub iterations: usize,
    pub final_target_confidence: f64,
    /// Per-pixel update counts (the P map); every entry ≤ per_pixel_cap.
    pub update_counts: Vec<usize>,
    /// L0 distance to the original input.
    pub pixels_changed: usize,
}

/// Descent-oriented combined gradient at `x` for target class `t`.
///
/// Stepping a pixel by `sign(g[i])·δ` decreases the combined objective:
/// in weighted mode that objective is `λ·ℓ_c − log p_t`; in normalized mode
/// the two terms are first scaled by `1/ℓ_c` and `1/|log p_t|` (the absolute
/// value because the log density takes either sign). `ClassLossOnly` drops
/// the density term entirely and needs no GMM.
pub fn combined_gradient(
    model: &TrainedModel,
    gmm: Option<&FeatureGMM>,
    x: &[f64],
    target: usize,
    cfg: &SearchConfig,
) -> Result<Vec<f64>> {
    let spec = match cfg.gradient_mode {
        GradientMode::Weighted { lambda } => LossSpec::Weighted {
            gmm: require_gmm(gmm)?,
            target,
            lambda,
        },
        GradientMode::Normalized { mu } => LossSpec::Normalized {
            gmm: require_gmm(gmm)?,
            target,
            mu,
        },
        GradientMode::ClassLossOnly => LossSpec::CrossEntropy { target },
    };
    let ascent = model.params.grad_input(x, &spec)?;
    Ok(ascent.as_slice().iter().map(|v| -v).collect())
}

fn require_gmm(gmm: Option<&FeatureGMM>) -> Result<&FeatureGMM> {
    gmm.ok_or(Error::NonFinite {
        what: "density gradient without a fitted GMM",
    })
}

/// g_k = g_raw + coeff·g_{k-1}. With coeff = 0 this is exactly `g_raw`.
pub fn momentum_gradient(g_raw: &[f64], g_prev: &[f64], coeff: f64) -> Vec<f64> {
    if coeff == 0.0 {
        return g_raw.to_vec();
    }
    g_raw
        .iter()
        .zip(g_prev)
        .map(|(g, p)| g + coeff * p)
        .collect()
}

/// Indices of the `q` largest saliencies among pixels with `selectable`
/// true. Ties resolve to the lowest index; if fewer than `q` pixels remain
/// selectable, all of them are returned. An empty result means the pixel
/// budget is exhausted everywhere.
pub fn select_q_largest_masked(abs_g: &[f64], selectable: &[bool], q: usize) -> Vec<usize> {
    debug_assert_eq!(abs_g.len(), selectable.len());
    assert!(q >= 1);
    let mut candidates: Vec<usize> = (0..abs_g.len()).filter(|&i| selectable[i]).collect();
    if candidates.len() > q {
        candidates.sort_by(|&a, &b| {
            abs_g[b]
                .partial_cmp(&abs_g[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        candidates.truncate(q);
        candidates.sort_unstable();
    }
    candidates
}

#[inline]
fn step_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Run the full search. The target need not differ from the current
/// prediction; an input already above the target confidence returns
/// immediately with zero iterations and the input unchanged.
pub fn generate(
    model: &TrainedModel,
    gmm: &FeatureGMM,
    x: &[f64],
    target: usize,
    cfg: &SearchConfig,
) -> Result<CounterfactualResult> {
    run_search(model, Some(gmm), x, target, cfg)
}

/// Shared search loop; the JSMA baseline runs it without a GMM.
pub(crate) fn run_search(
    model: &TrainedModel,
    gmm: Option<&FeatureGMM>,
    x: &[f64],
    target: usize,
    cfg: &SearchConfig,
) -> Result<CounterfactualResult> {
    if target >= model.class_count {
        return Err(Error::ClassOutOfRange {
            class: target,
            class_count: model.class_count,
        });
    }

    let mut current = x.to_vec();
    let mut g_prev = vec![0.0; x.len()];
    let mut counts = vec![0usize; x.len()];
    let mut iterations = 0usize;
    let success;
    let final_confidence;

    loop {
        let confidence = predict(model, &current)?.probs[target];
        if confidence > cfg.target_confidence {
            success = true;
            final_confidence = confidence;
            break;
        }
        if iterations >= cfg.max_iter {
            success = false;
            final_confidence = confidence;
            break;
        }

        let g_raw = combined_gradient(model, gmm, &current, target, cfg).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFiniteGradient {
                iteration: iterations,
            },
            other => other,
        })?;
        let g = momentum_gradient(&g_raw, &g_prev, cfg.momentum);

        let selectable: Vec<bool> = counts.iter().map(|&c| c < cfg.per_pixel_cap).collect();
        let abs_g: Vec<f64> = g.iter().map(|v| v.abs()).collect();
        let picked = select_q_largest_masked(&abs_g, &selectable, cfg.pixels_per_step);
        if picked.is_empty() {
            success = false;
            final_confidence = confidence;
            break;
        }

        for &i in &picked {
            current[i] += step_sign(g[i]) * cfg.step_size;
        }
        for v in &mut current {
            *v = v.clamp(0.0, 1.0);
        }
        for &i in &picked {
            counts[i] += 1;
        }
        g_prev = g;
        iterations += 1;
    }

    let pixels_changed = l0_distance(x, &current);
    Ok(CounterfactualResult {
        image: current,
        success,
        iterations,
        final_target_confidence: final_confidence,
        update_counts: counts,
        pixels_changed,
    })
}
