//! Losses that are linear in per-sample weights and soft labels.
//!
//! Every loss here reduces a batch by a weighted *sum*. Callers that want a
//! mean pass weights `1/B`.

use crate::matrix::{dot, log_sum_exp, softmax_in_place, Matrix2D};
use crate::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;
const UNIT_NORM_TOL: f64 = 1e-9;

/// Features with hard labels and optional soft labels and sample weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Matrix2D,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub soft_labels: Option<Matrix2D>,
    pub weights: Option<Vec<f64>>,
}

impl Batch {
    pub fn new(x: Matrix2D, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let b = Self {
            x,
            labels,
            num_classes,
            soft_labels: None,
            weights: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_soft_labels(mut self, soft: Matrix2D) -> Result<Self> {
        self.soft_labels = Some(soft);
        self.validate()?;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.x.rows() != n {
            return Err(Error::shape(format!(
                "{} feature rows for {n} labels",
                self.x.rows()
            )));
        }
        if let Some(&k) = self.labels.iter().find(|&&k| k >= self.num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {k} outside [0, {})",
                self.num_classes
            )));
        }
        if let Some(soft) = &self.soft_labels {
            if soft.shape() != (n, self.num_classes) {
                return Err(Error::shape(format!(
                    "soft labels are {:?}, expected ({n}, {})",
                    soft.shape(),
                    self.num_classes
                )));
            }
            check_simplex_rows(soft)?;
        }
        if let Some(w) = &self.weights {
            if w.len() != n {
                return Err(Error::shape(format!("{} weights for {n} samples", w.len())));
            }
            if w.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Domain("sample weights must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Soft labels when present, else one-hot rows of the hard labels.
    pub fn targets(&self) -> Matrix2D {
        match &self.soft_labels {
            Some(s) => s.clone(),
            None => Matrix2D::one_hot(&self.labels, self.num_classes)
                .expect("labels validated on construction"),
        }
    }

    /// Explicit weights, or `1/B` for every sample.
    pub fn weights_or_mean(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.len().max(1) as f64; self.len()],
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            soft_labels: self.soft_labels.as_ref().map(|s| s.select_rows(idx)),
            weights: self
                .weights
                .as_ref()
                .map(|w| idx.iter().map(|&i| w[i]).collect()),
        }
    }
}

pub(crate) fn check_simplex_rows(m: &Matrix2D) -> Result<()> {
    for (i, r) in m.iter_rows().enumerate() {
        let sum: f64 = r.iter().sum();
        if r.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!(
                "row {i} is not a probability vector (sum {sum})"
            )));
        }
    }
    Ok(())
}

fn check_ce_shapes(scores: &Matrix2D, weights: &[f64], targets: &Matrix2D) -> Result<()> {
    if targets.shape() != scores.shape() {
        return Err(Error::shape(format!(
            "targets {:?} vs predictions {:?}",
            targets.shape(),
            scores.shape()
        )));
    }
    if weights.len() != scores.rows() {
        return Err(Error::shape(format!(
            "{} weights for {} rows",
            weights.len(),
            scores.rows()
        )));
    }
    Ok(())
}

/// `−Σ_i w_i Σ_k y_ik log p_ik`.
pub fn weighted_soft_ce(probs: &Matrix2D, weights: &[f64], soft_labels: &Matrix2D) -> Result<f64> {
    check_ce_shapes(probs, weights, soft_labels)?;
    if let Some(p) = probs.as_slice().iter().find(|&&p| p <= 0.0) {
        return Err(Error::Domain(format!("non-positive probability {p}")));
    }
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        let row: f64 = probs
            .row(i)
            .iter()
            .zip(soft_labels.row(i))
            .map(|(p, y)| y * p.ln())
            .sum();
        total -= w * row;
    }
    Ok(total)
}

/// [`weighted_soft_ce`] evaluated from logits with a stable log-softmax, so
/// saturated predictions stay finite.
pub fn weighted_soft_ce_logits(
    logits: &Matrix2D,
    weights: &[f64],
    soft_labels: &Matrix2D,
) -> Result<f64> {
    check_ce_shapes(logits, weights, soft_labels)?;
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        let z = logits.row(i);
        let lse = log_sum_exp(z);
        let row: f64 = z
            .iter()
            .zip(soft_labels.row(i))
            .filter(|(_, &y)| y != 0.0)
            .map(|(z, y)| y * (z - lse))
            .sum();
        total -= w * row;
    }
    Ok(total)
}

/// Logit gradient of [`weighted_soft_ce`]: row `i` is `w_i (p_i − y_i)`.
pub fn ce_grad_logits(probs: &Matrix2D, weights: &[f64], soft_labels: &Matrix2D) -> Result<Matrix2D> {
    check_ce_shapes(probs, weights, soft_labels)?;
    let mut out = probs.clone();
    for (i, &w) in weights.iter().enumerate() {
        for (o, y) in out.row_mut(i).iter_mut().zip(soft_labels.row(i)) {
            *o = w * (*o - y);
        }
    }
    Ok(out)
}

/// Anchor and partner embeddings for contrastive losses.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub anchors: Matrix2D,
    pub partners: Matrix2D,
    pub temperature: f64,
    pub weights: Option<Vec<f64>>,
    /// `B x B` proxy-class soft labels; row `i` is a distribution over partners.
    pub proxy_labels: Option<Matrix2D>,
}

pub const DEFAULT_CONTRASTIVE_TEMPERATURE: f64 = 0.07;

impl ContrastiveBatch {
    pub fn new(anchors: Matrix2D, partners: Matrix2D, temperature: f64) -> Result<Self> {
        let cb = Self {
            anchors,
            partners,
            temperature,
            weights: None,
            proxy_labels: None,
        };
        cb.validate()?;
        Ok(cb)
    }

    pub fn len(&self) -> usize {
        self.anchors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.rows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchors.shape() != self.partners.shape() {
            return Err(Error::shape(format!(
                "anchors {:?} vs partners {:?}",
                self.anchors.shape(),
                self.partners.shape()
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for m in [&self.anchors, &self.partners] {
            for (i, r) in m.iter_rows().enumerate() {
                let n = dot(r, r).sqrt();
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::Domain(format!("embedding row {i} has norm {n}")));
                }
            }
        }
        let b = self.len();
        if let Some(w) = &self.weights {
            if w.len() != b {
                return Err(Error::shape(format!("{} weights for {b} pairs", w.len())));
            }
        }
        if let Some(y) = &self.proxy_labels {
            if y.shape() != (b, b) {
                return Err(Error::shape(format!(
                    "proxy labels {:?}, expected ({b}, {b})",
                    y.shape()
                )));
            }
            check_simplex_rows(y)?;
        }
        Ok(())
    }

    /// `S_ij = a_i · p_j / τ`.
    pub fn similarity_logits(&self) -> Matrix2D {
        let b = self.len();
        let mut s = Matrix2D::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                s.set(
                    i,
                    j,
                    dot(self.anchors.row(i), self.partners.row(j)) / self.temperature,
                );
            }
        }
        s
    }

    fn weights_or_ones(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.len()])
    }

    fn labels_or_identity(&self) -> Matrix2D {
        self.proxy_labels.clone().unwrap_or_else(|| {
            let idx: Vec<usize> = (0..self.len()).collect();
            Matrix2D::one_hot(&idx, self.len()).unwrap()
        })
    }
}

/// InfoNCE with in-batch negatives: each anchor's positive is its own
/// partner, the other `B − 1` partners are negatives. Summed over anchors.
pub fn infonce_loss(cb: &ContrastiveBatch) -> Result<f64> {
    if cb.is_empty() {
        return Err(Error::EmptyBatch("contrastive batch"));
    }
    cb.validate()?;
    let s = cb.similarity_logits();
    Ok((0..cb.len())
        .map(|i| log_sum_exp(s.row(i)) - s.get(i, i))
        .sum())
}

fn column(s: &Matrix2D, j: usize) -> Vec<f64> {
    (0..s.rows()).map(|i| s.get(i, j)).collect()
}

/// Symmetric contrastive loss with per-pair weights and soft labels over the
/// `B` proxy classes:
///
/// `Σ_i −w_i Σ_j y_ij [log softmax_j(S_i·) + log softmax_j(S_·i)]`.
///
/// With identity labels and unit weights this is the two-directional
/// image/text contrastive loss.
pub fn weighted_soft_clip(cb: &ContrastiveBatch) -> Result<f64> {
    cb.validate()?;
    let s = cb.similarity_logits();
    let w = cb.weights_or_ones();
    let y = cb.labels_or_identity();
    let mut total = 0.0;
    for i in 0..cb.len() {
        if w[i] == 0.0 {
            continue;
        }
        let row = s.row(i);
        let col = column(&s, i);
        let (lse_r, lse_c) = (log_sum_exp(row), log_sum_exp(&col));
        let mut acc = 0.0;
        for j in 0..cb.len() {
            let yij = y.get(i, j);
            if yij != 0.0 {
                acc += yij * ((row[j] - lse_r) + (col[j] - lse_c));
            }
        }
        total -= w[i] * acc;
    }
    Ok(total)
}

/// Gradient of [`weighted_soft_clip`] with respect to the similarity logits.
pub fn weighted_soft_clip_grad_logits(cb: &ContrastiveBatch) -> Result<Matrix2D> {
    cb.validate()?;
    let s = cb.similarity_logits();
    let w = cb.weights_or_ones();
    let y = cb.labels_or_identity();
    let b = cb.len();
    let mut g = Matrix2D::zeros(b, b);
    for i in 0..b {
        let mut pr = s.row(i).to_vec();
        softmax_in_place(&mut pr);
        let mut pc = column(&s, i);
        softmax_in_place(&mut pc);
        for j in 0..b {
            let yij = y.get(i, j);
            // row direction touches S_ij, column direction touches S_ji
            g.set(i, j, g.get(i, j) + w[i] * (pr[j] - yij));
            g.set(j, i, g.get(j, i) + w[i] * (pc[j] - yij));
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::softmax_rows;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn p(rows: &[[f64; 2]]) -> Matrix2D {
        Matrix2D::from_rows(rows).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix2D {
        let mut rng = stream(seed, Purpose::Data, &[]);
        Matrix2D::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    fn random_simplex(rows: usize, cols: usize, seed: u64) -> Matrix2D {
        let mut rng = stream(seed, Purpose::Data, &[1]);
        let mut m = Matrix2D::zeros(rows, cols);
        for i in 0..rows {
            let r: Vec<f64> = (0..cols).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = r.iter().sum();
            for (j, v) in r.into_iter().enumerate() {
                m.set(i, j, v / s);
            }
        }
        m
    }

    fn unit_rows(rows: usize, cols: usize, seed: u64) -> Matrix2D {
        let mut m = random(rows, cols, seed);
        for i in 0..rows {
            let n = dot(m.row(i), m.row(i)).sqrt();
            for v in m.row_mut(i) {
                *v /= n;
            }
        }
        m
    }

    #[test]
    fn ce_examples() {
        let one_hot = p(&[[1.0, 0.0]]);
        let l = weighted_soft_ce(&p(&[[0.5, 0.5]]), &[1.0], &one_hot).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);

        assert_eq!(
            weighted_soft_ce(&p(&[[0.3, 0.7], [0.5, 0.5]]), &[0.0, 0.0], &p(&[[1.0, 0.0], [0.0, 1.0]])).unwrap(),
            0.0
        );

        let l = weighted_soft_ce(&p(&[[0.25, 0.75]]), &[1.0], &p(&[[0.5, 0.5]])).unwrap();
        assert!((l - (-0.5 * (0.25f64.ln() + 0.75f64.ln()))).abs() < 1e-15);
        assert!((l - 0.836988).abs() < 1e-6);
    }

    #[test]
    fn ce_rejects_non_positive_probability() {
        let r = weighted_soft_ce(&p(&[[0.0, 1.0]]), &[1.0], &p(&[[0.0, 1.0]]));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn ce_from_logits_matches_probability_form() {
        let z = random(5, 3, 1);
        let y = random_simplex(5, 3, 2);
        let w = [0.1, 0.2, 0.0, 1.0, 0.5];
        let a = weighted_soft_ce(&softmax_rows(&z), &w, &y).unwrap();
        let b = weighted_soft_ce_logits(&z, &w, &y).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ce_grad_examples() {
        let probs = p(&[[0.2, 0.8], [0.6, 0.4]]);
        let g = ce_grad_logits(&probs, &[1.0, 1.0], &probs).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        let g = ce_grad_logits(&probs, &[0.0, 1.0], &p(&[[1.0, 0.0], [1.0, 0.0]])).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
        assert!((g.get(1, 0) + 0.4).abs() < 1e-15);
    }

    #[test]
    fn ce_grad_matches_finite_differences_through_softmax() {
        let z = random(4, 3, 5);
        let y = random_simplex(4, 3, 6);
        let w = [0.3, 0.0, 0.9, 0.5];
        let g = ce_grad_logits(&softmax_rows(&z), &w, &y).unwrap();
        let eps = 1e-5;
        let mut fd = Vec::new();
        for idx in 0..z.as_slice().len() {
            let mut zp = z.clone();
            zp.as_mut_slice()[idx] += eps;
            let mut zm = z.clone();
            zm.as_mut_slice()[idx] -= eps;
            let lp = weighted_soft_ce(&softmax_rows(&zp), &w, &y).unwrap();
            let lm = weighted_soft_ce(&softmax_rows(&zm), &w, &y).unwrap();
            fd.push((lp - lm) / (2.0 * eps));
        }
        let diff: f64 = g.as_slice().iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / norm <= 1e-6, "{}", diff / norm);
    }

    #[test]
    fn mean_weights_with_one_hot_is_mean_nll() {
        let z = random(6, 4, 9);
        let labels = [0, 3, 1, 1, 2, 0];
        let probs = softmax_rows(&z);
        let l = weighted_soft_ce(&probs, &[1.0 / 6.0; 6], &Matrix2D::one_hot(&labels, 4).unwrap()).unwrap();
        let nll: f64 = labels.iter().enumerate().map(|(i, &k)| -probs.get(i, k).ln()).sum::<f64>() / 6.0;
        assert!((l - nll).abs() < 1e-12);
    }

    #[test]
    fn batch_validation() {
        let x = random(2, 3, 1);
        assert!(Batch::new(x.clone(), vec![0, 2], 2).is_err());
        let b = Batch::new(x, vec![0, 1], 2).unwrap();
        assert!(b.clone().with_weights(vec![0.5, 1.5]).is_err());
        assert!(b.clone().with_soft_labels(p(&[[0.5, 0.6], [1.0, 0.0]])).is_err());
        assert!(b.with_soft_labels(p(&[[0.5, 0.5], [1.0, 0.0]])).is_ok());
    }

    /// Naive InfoNCE: explicit positive term plus a loop over negatives.
    fn infonce_oracle(a: &Matrix2D, q: &Matrix2D, tau: f64) -> f64 {
        let b = a.rows();
        let mut total = 0.0;
        for i in 0..b {
            let pos = (dot(a.row(i), q.row(i)) / tau).exp();
            let mut denom = pos;
            for j in 0..b {
                if j != i {
                    denom += (dot(a.row(i), q.row(j)) / tau).exp();
                }
            }
            total -= (pos / denom).ln();
        }
        total
    }

    #[test]
    fn infonce_examples() {
        let a = unit_rows(1, 3, 1);
        let q = unit_rows(1, 3, 2);
        assert_eq!(infonce_loss(&ContrastiveBatch::new(a, q, 0.07).unwrap()).unwrap(), 0.0);

        // every similarity equal: all anchors and partners identical
        let row = unit_rows(1, 3, 3);
        let same = row.select_rows(&[0, 0, 0, 0]);
        let l = infonce_loss(&ContrastiveBatch::new(same.clone(), same, 0.5).unwrap()).unwrap();
        assert!((l - 4.0 * 4f64.ln()).abs() < 1e-12);

        let a = unit_rows(4, 5, 4);
        let q = unit_rows(4, 5, 5);
        let l = infonce_loss(&ContrastiveBatch::new(a.clone(), q.clone(), 0.3).unwrap()).unwrap();
        assert!((l - infonce_oracle(&a, &q, 0.3)).abs() < 1e-10);

        let empty = ContrastiveBatch::new(Matrix2D::zeros(0, 3), Matrix2D::zeros(0, 3), 0.1).unwrap();
        assert!(matches!(infonce_loss(&empty), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn embeddings_must_be_normalised() {
        let a = random(2, 3, 1);
        assert!(ContrastiveBatch::new(a.clone(), a, 0.1).is_err());
    }

    /// Triple loop over (pair, proxy class, normaliser).
    fn clip_oracle(a: &Matrix2D, q: &Matrix2D, tau: f64, w: &[f64], y: &Matrix2D) -> f64 {
        let b = a.rows();
        let sim = |i: usize, j: usize| dot(a.row(i), q.row(j)) / tau;
        let mut total = 0.0;
        for i in 0..b {
            for j in 0..b {
                let mut zr = 0.0;
                let mut zc = 0.0;
                for k in 0..b {
                    zr += sim(i, k).exp();
                    zc += sim(k, i).exp();
                }
                let lr = (sim(i, j).exp() / zr).ln();
                let lc = (sim(j, i).exp() / zc).ln();
                total -= w[i] * y.get(i, j) * (lr + lc);
            }
        }
        total
    }

    #[test]
    fn clip_examples() {
        let a = unit_rows(3, 4, 10);
        let q = unit_rows(3, 4, 11);
        let base = ContrastiveBatch::new(a.clone(), q.clone(), 0.2).unwrap();
        let sym = infonce_loss(&base).unwrap()
            + infonce_loss(&ContrastiveBatch::new(q.clone(), a.clone(), 0.2).unwrap()).unwrap();
        assert!((weighted_soft_clip(&base).unwrap() - sym).abs() < 1e-10);

        let mut zero = base.clone();
        zero.weights = Some(vec![0.0; 3]);
        assert_eq!(weighted_soft_clip(&zero).unwrap(), 0.0);

        let y = random_simplex(3, 3, 12);
        let w = vec![0.2, 0.7, 1.0];
        let mut soft = base;
        soft.weights = Some(w.clone());
        soft.proxy_labels = Some(y.clone());
        let l = weighted_soft_clip(&soft).unwrap();
        assert!((l - clip_oracle(&a, &q, 0.2, &w, &y)).abs() < 1e-10);
    }

    #[test]
    fn clip_logit_gradient_matches_finite_differences() {
        let a = unit_rows(3, 4, 20);
        let q = unit_rows(3, 4, 21);
        let mut cb = ContrastiveBatch::new(a, q, 0.5).unwrap();
        cb.weights = Some(vec![0.3, 1.0, 0.6]);
        cb.proxy_labels = Some(random_simplex(3, 3, 22));
        let g = weighted_soft_clip_grad_logits(&cb).unwrap();
        // loss as a function of S directly
        let w = cb.weights.clone().unwrap();
        let y = cb.proxy_labels.clone().unwrap();
        let loss_of = |s: &Matrix2D| -> f64 {
            let mut t = 0.0;
            for i in 0..3 {
                let col = column(s, i);
                let (lr, lc) = (log_sum_exp(s.row(i)), log_sum_exp(&col));
                for j in 0..3 {
                    t -= w[i] * y.get(i, j) * ((s.get(i, j) - lr) + (col[j] - lc));
                }
            }
            t
        };
        let s = cb.similarity_logits();
        let eps = 1e-6;
        for idx in 0..9 {
            let mut sp = s.clone();
            sp.as_mut_slice()[idx] += eps;
            let mut sm = s.clone();
            sm.as_mut_slice()[idx] -= eps;
            let fd = (loss_of(&sp) - loss_of(&sm)) / (2.0 * eps);
            assert!((fd - g.as_slice()[idx]).abs() < 1e-7, "{idx}: {fd} vs {}", g.as_slice()[idx]);
        }
    }

    proptest! {
        #[test]
        fn ce_is_linear_in_weights_and_labels(seed in 0u64..100_000, lam in 0.0f64..=1.0) {
            let probs = softmax_rows(&random(5, 4, seed));
            let y1 = random_simplex(5, 4, seed + 1);
            let y2 = random_simplex(5, 4, seed + 2);
            let mut rng = stream(seed, Purpose::Oracle, &[]);
            let w1: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let w2: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let wm: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let lhs = weighted_soft_ce(&probs, &wm, &y1).unwrap();
            let rhs = lam * weighted_soft_ce(&probs, &w1, &y1).unwrap()
                + (1.0 - lam) * weighted_soft_ce(&probs, &w2, &y1).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);

            let mut ym = y1.clone();
            for (m, (a, b)) in ym.as_mut_slice().iter_mut().zip(y1.as_slice().iter().zip(y2.as_slice())) {
                *m = lam * a + (1.0 - lam) * b;
            }
            let lhs = weighted_soft_ce(&probs, &w1, &ym).unwrap();
            let rhs = lam * weighted_soft_ce(&probs, &w1, &y1).unwrap()
                + (1.0 - lam) * weighted_soft_ce(&probs, &w1, &y2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
