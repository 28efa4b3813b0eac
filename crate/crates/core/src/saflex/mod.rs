//! The assignment rule and the training step built on it.
//!
//! For one augmented sample `x` and class `k`, let `ℓ_k` be the cross-entropy
//! of `x` at hard label `k` and `g_val` the validation-loss gradient. The
//! alignment score is
//!
//! ```text
//! Π_k = ⟨∇θ ℓ_k(x), g_val⟩ = p·u − u_k,   u = (∂z/∂θ) g_val,  p = softmax(z)
//! ```
//!
//! so a descent step on label `k` lowers the validation loss by `α·Π_k` to
//! first order, and larger is better. One JVP per sample gives the whole
//! K-vector.
//!
//! Given `Π`, each sample gets the soft label
//! `y = softmax((Π + β e_orig + g) / τ)` with Gumbel noise `g`, is kept
//! (`w = 1`) when `Π · y ≥ 0`, and the kept weights are renormalised to sum to
//! one. If nothing is kept the augmented batch contributes nothing.

pub mod contrastive;

use rand::distr::Distribution;
use rand_distr::Gumbel;
use serde::{Deserialize, Serialize};

use crate::losses::{ce_grad_logits, weighted_soft_ce_logits, Batch};
use crate::matrix::{argmax, dot, softmax_in_place, Matrix2D};
use crate::nn::{
    jvp_logits_rows, mlp_backward, mlp_forward, mlp_logits, sgd_step, ForwardCache, ModelParams, ParamGrad,
};
use crate::rng::{Purpose, StreamKey};
use crate::{Error, Result};

/// Retention penalty used for tabular data.
pub const TABULAR_BETA: f64 = 1.0;
/// Gumbel temperature used for contrastive fine-tuning.
pub const CONTRASTIVE_TAU: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaflexConfig {
    /// Bonus on the original label's score; relabelling needs a margin ≥ β.
    pub beta: f64,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    pub val_batch_size: usize,
    pub seed: u64,
    pub gumbel: bool,
}

impl Default for SaflexConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            tau: 0.01,
            val_batch_size: 64,
            seed: 0,
            gumbel: true,
        }
    }
}

impl SaflexConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if self.val_batch_size == 0 {
            return Err(Error::InvalidArgument("val_batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample alignment scores, one row of length `K` per augmented sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PiScores(Matrix2D);

impl PiScores {
    pub fn new(scores: Matrix2D) -> Self {
        Self(scores)
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix2D {
        &self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssignDiagnostics {
    pub frac_zero_weight: f64,
    /// Fraction of samples whose soft-label argmax differs from the original label.
    pub frac_label_changed: f64,
    /// Fraction kept under the alternative `Σ_k Π_k ≥ 0` rule.
    pub frac_kept_sum_rule: f64,
    /// Fraction where the `Π·y ≥ 0` and `Σ_k Π_k ≥ 0` rules disagree.
    pub frac_rule_disagreement: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaflexOutput {
    /// Renormalised weights: sum to one, or all zero when nothing is kept.
    pub weights: Vec<f64>,
    pub soft_labels: Matrix2D,
    /// Pre-normalisation binary weights.
    pub kept: Vec<bool>,
    /// Per sample: soft-label argmax differs from the original label.
    pub label_changed: Vec<bool>,
    pub diagnostics: AssignDiagnostics,
}

impl SaflexOutput {
    /// Argmax of every soft label.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.soft_labels.iter_rows().map(argmax).collect()
    }
}

/// Mean cross-entropy over the validation batch and its gradient.
pub fn validation_loss_and_gradient(
    params: &ModelParams,
    val: &Batch,
) -> Result<(f64, ParamGrad)> {
    if val.is_empty() {
        return Err(Error::EmptyBatch("validation batch"));
    }
    let (probs, cache) = mlp_forward(params, &val.x)?;
    let w = vec![1.0 / val.len() as f64; val.len()];
    let y = val.targets();
    let loss = weighted_soft_ce_logits(cache.logits(), &w, &y)?;
    let d = ce_grad_logits(&probs, &w, &y)?;
    Ok((loss, mlp_backward(params, &cache, &d)?))
}

/// Mean cross-entropy of a batch against its targets.
pub fn mean_loss(params: &ModelParams, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("batch"));
    }
    let logits = mlp_logits(params, &batch.x)?;
    let w = vec![1.0 / batch.len() as f64; batch.len()];
    weighted_soft_ce_logits(&logits, &w, &batch.targets())
}

/// Mean cross-entropy gradient over the validation minibatch.
pub fn validation_gradient(params: &ModelParams, val: &Batch) -> Result<ParamGrad> {
    validation_loss_and_gradient(params, val).map(|(_, g)| g)
}

/// `Π_k = p·u − u_k` written into `out`.
pub fn pi_from_logit_jvp(probs: &[f64], u: &[f64], out: &mut [f64]) {
    let pu = dot(probs, u);
    for (o, &uk) in out.iter_mut().zip(u) {
        *o = pu - uk;
    }
}

/// Alignment scores for every row of `x_aug`, computed at `params`.
pub fn pi_scores(params: &ModelParams, x_aug: &Matrix2D, g_val: &ParamGrad) -> Result<PiScores> {
    let (_, cache) = mlp_forward(params, x_aug)?;
    pi_scores_from_cache(params, &cache, 0..x_aug.rows(), g_val)
}

/// Alignment scores for a range of rows of an existing forward cache.
pub fn pi_scores_from_cache(
    params: &ModelParams,
    cache: &ForwardCache,
    rows: std::ops::Range<usize>,
    g_val: &ParamGrad,
) -> Result<PiScores> {
    let u = jvp_logits_rows(params, cache, rows.clone(), g_val)?;
    let mut pi = Matrix2D::zeros(u.rows(), u.cols());
    for (i, r) in rows.enumerate() {
        pi_from_logit_jvp(cache.probs().row(r), u.row(i), pi.row_mut(i));
    }
    Ok(PiScores(pi))
}

/// Soft labels and weights for a batch of scores.
///
/// Gumbel noise for sample `i` comes from `key.sample_rng(Gumbel, i)`, so the
/// result depends only on `(pi, labels, cfg, key)`.
pub fn saflex_assign(
    pi: &PiScores,
    orig_labels: &[usize],
    cfg: &SaflexConfig,
    key: &StreamKey,
) -> Result<SaflexOutput> {
    cfg.validate()?;
    let (b, k) = (pi.len(), pi.num_classes());
    if orig_labels.len() != b {
        return Err(Error::shape(format!(
            "{} original labels for {b} samples",
            orig_labels.len()
        )));
    }
    if let Some(&bad) = orig_labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "original label {bad} outside [0, {k})"
        )));
    }
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let mut soft = Matrix2D::zeros(b, k);
    let mut kept = vec![false; b];
    let mut changed = vec![false; b];
    let mut sum_rule_kept = 0usize;
    let mut disagree = 0usize;
    for i in 0..b {
        let scores = pi.row(i);
        let y = soft.row_mut(i);
        y.copy_from_slice(scores);
        y[orig_labels[i]] += cfg.beta;
        if cfg.gumbel {
            let mut rng = key.sample_rng(Purpose::Gumbel, i as u64);
            for v in y.iter_mut() {
                *v += gumbel.sample(&mut rng);
            }
        }
        for v in y.iter_mut() {
            *v /= cfg.tau;
        }
        softmax_in_place(y);
        kept[i] = dot(scores, y) >= 0.0;
        changed[i] = argmax(y) != orig_labels[i];
        let sum_rule = scores.iter().sum::<f64>() >= 0.0;
        sum_rule_kept += sum_rule as usize;
        disagree += (sum_rule != kept[i]) as usize;
    }
    let weights = renormalize(&kept);
    let n = b.max(1) as f64;
    let diagnostics = AssignDiagnostics {
        frac_zero_weight: kept.iter().filter(|&&w| !w).count() as f64 / n,
        frac_label_changed: changed.iter().filter(|&&c| c).count() as f64 / n,
        frac_kept_sum_rule: sum_rule_kept as f64 / n,
        frac_rule_disagreement: disagree as f64 / n,
    };
    Ok(SaflexOutput {
        weights,
        soft_labels: soft,
        kept,
        label_changed: changed,
        diagnostics,
    })
}

/// Binary weights scaled to sum to one; all zero when none are kept.
pub fn renormalize(kept: &[bool]) -> Vec<f64> {
    let count = kept.iter().filter(|&&k| k).count();
    if count == 0 {
        return vec![0.0; kept.len()];
    }
    let w = 1.0 / count as f64;
    kept.iter().map(|&k| if k { w } else { 0.0 }).collect()
}

/// The `τ → 0`, noise-free limit of [`saflex_assign`]: hard label
/// `argmax(Π + β e_orig)` (lowest index on ties) and weight `Π_label ≥ 0`.
pub fn closed_form_assignment(
    pi: &PiScores,
    orig_labels: &[usize],
    beta: f64,
) -> (Vec<usize>, Vec<bool>) {
    let mut labels = Vec::with_capacity(pi.len());
    let mut kept = Vec::with_capacity(pi.len());
    for i in 0..pi.len() {
        let mut s = pi.row(i).to_vec();
        s[orig_labels[i]] += beta;
        let k = argmax(&s);
        labels.push(k);
        kept.push(pi.row(i)[k] >= 0.0);
    }
    (labels, kept)
}

/// Gradient of `mean CE(train) + Σ_i w_i CE(aug_i; y_i)` at `params`, from a
/// forward cache over the stacked `[train; aug]` rows.
///
/// Returns the combined loss and its gradient.
pub fn combined_gradient(
    params: &ModelParams,
    stacked: &ForwardCache,
    train: &Batch,
    aug_targets: &Matrix2D,
    aug_weights: &[f64],
) -> Result<(f64, ParamGrad)> {
    let nt = train.len();
    if stacked.batch_size() != nt + aug_weights.len() || aug_targets.rows() != aug_weights.len() {
        return Err(Error::shape("stacked cache does not match train + aug sizes"));
    }
    let targets = train.targets().vstack(aug_targets)?;
    let mut w = vec![1.0 / nt.max(1) as f64; nt];
    w.extend_from_slice(aug_weights);
    let loss = weighted_soft_ce_logits(stacked.logits(), &w, &targets)?;
    let d = ce_grad_logits(stacked.probs(), &w, &targets)?;
    Ok((loss, mlp_backward(params, stacked, &d)?))
}

/// Update direction chosen by one assignment, before it is applied.
#[derive(Clone, Debug)]
pub struct SaflexDirection {
    pub grad: ParamGrad,
    pub output: SaflexOutput,
    pub pi: PiScores,
    pub g_val: ParamGrad,
    pub val_loss_before: f64,
    pub combined_loss: f64,
}

/// Everything in [`saflex_step`] except the parameter update.
pub fn saflex_direction(
    params: &ModelParams,
    train: &Batch,
    aug: &Batch,
    val: &Batch,
    cfg: &SaflexConfig,
    key: &StreamKey,
) -> Result<SaflexDirection> {
    if train.is_empty() {
        return Err(Error::EmptyBatch("training batch"));
    }
    if aug.is_empty() {
        return Err(Error::EmptyBatch("augmented batch"));
    }
    let (val_loss_before, g_val) = validation_loss_and_gradient(params, val)?;
    let stacked = train.x.vstack(&aug.x)?;
    let (_, cache) = mlp_forward(params, &stacked)?;
    let nt = train.len();
    let pi = pi_scores_from_cache(params, &cache, nt..nt + aug.len(), &g_val)?;
    let output = saflex_assign(&pi, &aug.labels, cfg, key)?;
    let (combined_loss, grad) =
        combined_gradient(params, &cache, train, &output.soft_labels, &output.weights)?;
    Ok(SaflexDirection {
        grad,
        output,
        pi,
        g_val,
        val_loss_before,
        combined_loss,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub val_loss_before: f64,
    pub val_loss_after: f64,
    pub combined_loss: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub params: ModelParams,
    pub output: SaflexOutput,
    pub metrics: StepMetrics,
}

/// One greedy step: validation gradient, scores, assignment, and an SGD step
/// of size `lr` on the combined loss.
pub fn saflex_step(
    params: &ModelParams,
    train: &Batch,
    aug: &Batch,
    val: &Batch,
    lr: f64,
    cfg: &SaflexConfig,
    key: &StreamKey,
) -> Result<StepOutcome> {
    if !(lr >= 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} < 0")));
    }
    let dir = saflex_direction(params, train, aug, val, cfg, key)?;
    let next = sgd_step(params, &dir.grad, lr)?;
    let val_loss_after = mean_loss(&next, val)?;
    Ok(StepOutcome {
        params: next,
        output: dir.output,
        metrics: StepMetrics {
            val_loss_before: dir.val_loss_before,
            val_loss_after,
            combined_loss: dir.combined_loss,
        },
    })
}
