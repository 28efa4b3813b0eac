//! The assignment rule for contrastive objectives, where the `B` pairs of a
//! batch act as `B` proxy classes.
//!
//! A single shared encoder maps anchors and partners to embeddings
//! `v / |v|`. The similarity logits are `S_ij = â_i · p̂_j / τ_c`, and the
//! per-proxy-class loss of pair `i` at class `j` is
//! `ℓ_ij = −log softmax(S_i·)_j − log softmax(S_·i)_j`. Scores
//! `Π_ij = ⟨∇θ ℓ_ij, g_val⟩` come from JVPs of the similarity logits.

use super::{pi_from_logit_jvp, saflex_assign, PiScores, SaflexConfig, SaflexOutput};
use crate::losses::{weighted_soft_clip, weighted_soft_clip_grad_logits, ContrastiveBatch};
use crate::matrix::{dot, softmax_in_place, Matrix2D};
use crate::nn::{jvp_logits_batch, mlp_backward, mlp_forward, ForwardCache, ModelParams, ParamGrad};
use crate::rng::StreamKey;
use crate::{Error, Result};

/// Unit-norm embeddings of every row, plus what the derivatives need.
pub struct Embedding {
    pub unit: Matrix2D,
    pub norms: Vec<f64>,
    pub cache: ForwardCache,
}

pub fn embed(encoder: &ModelParams, x: &Matrix2D) -> Result<Embedding> {
    let (_, cache) = mlp_forward(encoder, x)?;
    let raw = cache.logits();
    let mut unit = raw.clone();
    let mut norms = Vec::with_capacity(raw.rows());
    for i in 0..raw.rows() {
        let n = dot(raw.row(i), raw.row(i)).sqrt();
        if n == 0.0 {
            return Err(Error::Domain(format!("zero embedding for row {i}")));
        }
        norms.push(n);
        for v in unit.row_mut(i) {
            *v /= n;
        }
    }
    Ok(Embedding { unit, norms, cache })
}

/// Pull a gradient on unit embeddings back to the raw encoder outputs:
/// `(g − ê(ê·g)) / |v|`.
fn through_normalization(e: &Embedding, d_unit: &Matrix2D) -> Matrix2D {
    let mut out = d_unit.clone();
    for i in 0..out.rows() {
        let u = e.unit.row(i);
        let proj = dot(u, d_unit.row(i));
        for (o, &uj) in out.row_mut(i).iter_mut().zip(u) {
            *o = (*o - uj * proj) / e.norms[i];
        }
    }
    out
}

/// Same map applied to a tangent: `(u − ê(ê·u)) / |v|`.
fn tangent_through_normalization(e: &Embedding, raw_tangent: &Matrix2D) -> Matrix2D {
    through_normalization(e, raw_tangent)
}

fn check_pairs(anchors_x: &Matrix2D, partners_x: &Matrix2D) -> Result<()> {
    if anchors_x.shape() != partners_x.shape() {
        return Err(Error::shape(format!(
            "anchors {:?} vs partners {:?}",
            anchors_x.shape(),
            partners_x.shape()
        )));
    }
    if anchors_x.rows() == 0 {
        return Err(Error::EmptyBatch("contrastive batch"));
    }
    Ok(())
}

/// Contrastive batch of unit embeddings for the given raw pairs.
pub fn contrastive_batch(
    encoder: &ModelParams,
    anchors_x: &Matrix2D,
    partners_x: &Matrix2D,
    temperature: f64,
) -> Result<ContrastiveBatch> {
    check_pairs(anchors_x, partners_x)?;
    let a = embed(encoder, anchors_x)?;
    let p = embed(encoder, partners_x)?;
    ContrastiveBatch::new(a.unit, p.unit, temperature)
}

/// Mean symmetric contrastive loss over the pairs and its parameter gradient.
pub fn contrastive_loss_and_gradient(
    encoder: &ModelParams,
    anchors_x: &Matrix2D,
    partners_x: &Matrix2D,
    temperature: f64,
) -> Result<(f64, ParamGrad)> {
    check_pairs(anchors_x, partners_x)?;
    let a = embed(encoder, anchors_x)?;
    let p = embed(encoder, partners_x)?;
    let b = anchors_x.rows();
    let mut cb = ContrastiveBatch::new(a.unit.clone(), p.unit.clone(), temperature)?;
    cb.weights = Some(vec![1.0 / b as f64; b]);
    let loss = weighted_soft_clip(&cb)?;
    let ds = weighted_soft_clip_grad_logits(&cb)?;
    let e = a.unit.cols();
    let mut da = Matrix2D::zeros(b, e);
    let mut dp = Matrix2D::zeros(b, e);
    for i in 0..b {
        for j in 0..b {
            let g = ds.get(i, j) / temperature;
            if g == 0.0 {
                continue;
            }
            for t in 0..e {
                da.row_mut(i)[t] += g * p.unit.get(j, t);
                dp.row_mut(j)[t] += g * a.unit.get(i, t);
            }
        }
    }
    let mut grad = mlp_backward(encoder, &a.cache, &through_normalization(&a, &da))?;
    grad.axpy(1.0, &mlp_backward(encoder, &p.cache, &through_normalization(&p, &dp))?)?;
    Ok((loss, grad))
}

/// Alignment scores over the `B` proxy classes of every pair.
pub fn contrastive_pi_scores(
    encoder: &ModelParams,
    anchors_x: &Matrix2D,
    partners_x: &Matrix2D,
    g_val: &ParamGrad,
    temperature: f64,
) -> Result<PiScores> {
    check_pairs(anchors_x, partners_x)?;
    let a = embed(encoder, anchors_x)?;
    let p = embed(encoder, partners_x)?;
    let da = tangent_through_normalization(&a, &jvp_logits_batch(encoder, &a.cache, g_val)?);
    let dp = tangent_through_normalization(&p, &jvp_logits_batch(encoder, &p.cache, g_val)?);
    let b = anchors_x.rows();
    let mut s = Matrix2D::zeros(b, b);
    let mut ds = Matrix2D::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            s.set(i, j, dot(a.unit.row(i), p.unit.row(j)) / temperature);
            ds.set(
                i,
                j,
                (dot(da.row(i), p.unit.row(j)) + dot(a.unit.row(i), dp.row(j))) / temperature,
            );
        }
    }
    let mut pi = Matrix2D::zeros(b, b);
    let mut row_part = vec![0.0; b];
    let mut col_part = vec![0.0; b];
    for i in 0..b {
        let mut pr = s.row(i).to_vec();
        softmax_in_place(&mut pr);
        pi_from_logit_jvp(&pr, ds.row(i), &mut row_part);
        let mut pc: Vec<f64> = (0..b).map(|k| s.get(k, i)).collect();
        softmax_in_place(&mut pc);
        let uc: Vec<f64> = (0..b).map(|k| ds.get(k, i)).collect();
        pi_from_logit_jvp(&pc, &uc, &mut col_part);
        for (o, (r, c)) in pi.row_mut(i).iter_mut().zip(row_part.iter().zip(&col_part)) {
            *o = r + c;
        }
    }
    Ok(PiScores::new(pi))
}

/// [`saflex_assign`] over proxy classes; pair `i`'s original class is `i`.
pub fn saflex_assign_contrastive(
    pi: &PiScores,
    cfg: &SaflexConfig,
    key: &StreamKey,
) -> Result<SaflexOutput> {
    if pi.num_classes() != pi.len() {
        return Err(Error::shape(format!(
            "proxy scores must be B x B, got {} x {}",
            pi.len(),
            pi.num_classes()
        )));
    }
    let identity: Vec<usize> = (0..pi.len()).collect();
    saflex_assign(pi, &identity, cfg, key)
}
