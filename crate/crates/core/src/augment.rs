//! Upstream augmenters: they produce candidate `(x_aug, y_aug)` pairs and know
//! nothing about the model.
//!
//! Every augmenter takes its input by reference and returns a new batch of the
//! same size and width.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::losses::Batch;
use crate::rng::{stream, Purpose, StreamKey};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentStage {
    GaussianJitter { sigma: f64 },
    CropFlip { pad: usize, flip_prob: f64 },
    Mixup { alpha: f64 },
    CutmixTabular { p_replace: f64 },
    LabelNoise { rho: f64 },
}

impl AugmentStage {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")))
            }
        };
        match *self {
            AugmentStage::GaussianJitter { sigma } if !(sigma >= 0.0) => Err(
                Error::InvalidArgument(format!("sigma = {sigma} must be non-negative")),
            ),
            AugmentStage::Mixup { alpha } if !(alpha > 0.0) => Err(Error::InvalidArgument(
                format!("mixup alpha = {alpha} must be positive"),
            )),
            AugmentStage::CropFlip { flip_prob, .. } => prob("flip_prob", flip_prob),
            AugmentStage::CutmixTabular { p_replace } => prob("p_replace", p_replace),
            AugmentStage::LabelNoise { rho } => prob("rho", rho),
            _ => Ok(()),
        }
    }
}

/// A seeded chain of augmentation stages applied in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmenterSpec {
    pub seed: u64,
    pub stages: Vec<AugmentStage>,
}

impl AugmenterSpec {
    pub fn validate(&self) -> Result<()> {
        self.stages.iter().try_for_each(AugmentStage::validate)
    }

    /// Applies every stage. Stage `s` draws from the stream
    /// `(spec.seed, epoch, batch, s)`. `groups` lists column ranges that
    /// tabular CutMix must move as a unit (one-hot blocks); pass `&[]` when
    /// every column is independent.
    pub fn apply(&self, batch: &Batch, key: &StreamKey, groups: &[Range<usize>]) -> Result<AugmentedBatch> {
        let mut out = batch.clone();
        let mut corrupted = vec![false; batch.len()];
        for (s, stage) in self.stages.iter().enumerate() {
            let mut rng = stream(self.seed, Purpose::Augment, &[key.epoch, key.batch, s as u64]);
            out = match *stage {
                AugmentStage::GaussianJitter { sigma } => gaussian_jitter(&out, sigma, &mut rng)?,
                AugmentStage::CropFlip { pad, flip_prob } => crop_flip(&out, pad, flip_prob, &mut rng)?,
                AugmentStage::Mixup { alpha } => mixup(&out, alpha, &mut rng)?,
                AugmentStage::CutmixTabular { p_replace } => {
                    cutmix_tabular(&out, p_replace, groups, &mut rng)?
                }
                AugmentStage::LabelNoise { rho } => {
                    let (b, flipped) = label_noise(&out, rho, &mut rng)?;
                    for (c, f) in corrupted.iter_mut().zip(flipped) {
                        *c |= f;
                    }
                    b
                }
            };
        }
        Ok(AugmentedBatch { batch: out, corrupted })
    }
}

/// Augmented batch plus the ground-truth mask of samples whose label was
/// deliberately corrupted.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedBatch {
    pub batch: Batch,
    pub corrupted: Vec<bool>,
}

/// `x + ε`, `ε ~ N(0, σ² I)`; labels unchanged.
pub fn gaussian_jitter(batch: &Batch, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Batch> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma} must be non-negative")));
    }
    let mut out = batch.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for v in out.x.as_mut_slice() {
        *v += normal.sample(rng);
    }
    Ok(out)
}

/// Tabular CutMix: each feature group is independently, with probability
/// `p_replace`, copied from a uniformly chosen other row. The base row keeps
/// its label.
pub fn cutmix_tabular(
    batch: &Batch,
    p_replace: f64,
    groups: &[Range<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    if !(0.0..=1.0).contains(&p_replace) {
        return Err(Error::InvalidArgument(format!("p_replace = {p_replace} outside [0, 1]")));
    }
    let mut out = batch.clone();
    let n = batch.len();
    if n < 2 || p_replace == 0.0 {
        return Ok(out);
    }
    let singles: Vec<Range<usize>>;
    let groups = if groups.is_empty() {
        singles = (0..batch.x.cols()).map(|c| c..c + 1).collect();
        &singles[..]
    } else {
        groups
    };
    for i in 0..n {
        for g in groups {
            if rng.random::<f64>() < p_replace {
                let mut donor = rng.random_range(0..n - 1);
                if donor >= i {
                    donor += 1;
                }
                let src = &batch.x.row(donor)[g.clone()];
                out.x.row_mut(i)[g.clone()].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

/// Mixup with `λ ~ Beta(α, α)` and partners from a random permutation.
pub fn mixup(batch: &Batch, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Batch> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("mixup alpha = {alpha} must be positive")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut perm: Vec<usize> = (0..batch.len()).collect();
    perm.shuffle(rng);
    let lambdas: Vec<f64> = (0..batch.len()).map(|_| beta.sample(rng)).collect();
    mixup_with(batch, &lambdas, &perm)
}

/// Deterministic core of [`mixup`]: row `i` mixes with row `partner[i]` using
/// weight `lambda[i]` on itself.
pub fn mixup_with(batch: &Batch, lambda: &[f64], partner: &[usize]) -> Result<Batch> {
    let n = batch.len();
    if lambda.len() != n || partner.len() != n {
        return Err(Error::shape("mixup needs one lambda and one partner per row"));
    }
    let targets = batch.targets();
    let mut x = batch.x.clone();
    let mut soft = targets.clone();
    let mut labels = batch.labels.clone();
    for i in 0..n {
        let (l, j) = (lambda[i], partner[i]);
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::InvalidArgument(format!("lambda {l} outside [0, 1]")));
        }
        for (o, (a, b)) in x.row_mut(i).iter_mut().zip(batch.x.row(i).iter().zip(batch.x.row(j))) {
            *o = l * a + (1.0 - l) * b;
        }
        for (o, (a, b)) in soft.row_mut(i).iter_mut().zip(targets.row(i).iter().zip(targets.row(j))) {
            *o = l * a + (1.0 - l) * b;
        }
        if l < 0.5 {
            labels[i] = batch.labels[j];
        }
    }
    Ok(Batch {
        x,
        labels,
        num_classes: batch.num_classes,
        soft_labels: Some(soft),
        weights: batch.weights.clone(),
    })
}

fn image_side(cols: usize) -> Result<usize> {
    let side = (cols as f64).sqrt().round() as usize;
    if side * side != cols || side == 0 {
        return Err(Error::InvalidArgument(format!(
            "{cols} features do not form a square image"
        )));
    }
    Ok(side)
}

/// Random crop offsets in `0..=2·pad` and flip flags for `n` images.
pub fn draw_crop_params(n: usize, pad: usize, flip_prob: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, bool)> {
    (0..n)
        .map(|_| {
            let oy = rng.random_range(0..=2 * pad);
            let ox = rng.random_range(0..=2 * pad);
            (oy, ox, rng.random::<f64>() < flip_prob)
        })
        .collect()
}

/// Zero-pad each square image by `pad`, crop back at a uniform offset and
/// mirror horizontally with probability `flip_prob`.
pub fn crop_flip(batch: &Batch, pad: usize, flip_prob: f64, rng: &mut ChaCha8Rng) -> Result<Batch> {
    image_side(batch.x.cols())?;
    let params = draw_crop_params(batch.len(), pad, flip_prob, rng);
    crop_flip_with(batch, pad, &params)
}

/// Deterministic core of [`crop_flip`] with explicit `(oy, ox, flip)` per image.
pub fn crop_flip_with(batch: &Batch, pad: usize, params: &[(usize, usize, bool)]) -> Result<Batch> {
    let side = image_side(batch.x.cols())?;
    if params.len() != batch.len() {
        return Err(Error::shape("one crop parameter triple per image"));
    }
    let mut out = batch.clone();
    for (i, &(oy, ox, flip)) in params.iter().enumerate() {
        if oy > 2 * pad || ox > 2 * pad {
            return Err(Error::InvalidArgument(format!("offset ({oy}, {ox}) beyond padding {pad}")));
        }
        let src = batch.x.row(i);
        let dst = out.x.row_mut(i);
        for r in 0..side {
            for c in 0..side {
                let sr = (r + oy) as isize - pad as isize;
                let sc = (c + ox) as isize - pad as isize;
                let v = if (0..side as isize).contains(&sr) && (0..side as isize).contains(&sc) {
                    src[sr as usize * side + sc as usize]
                } else {
                    0.0
                };
                let dc = if flip { side - 1 - c } else { c };
                dst[r * side + dc] = v;
            }
        }
    }
    Ok(out)
}

/// Replaces each label, with probability `rho`, by a uniformly chosen
/// different class. Returns the new batch and the mask of changed rows.
pub fn label_noise(batch: &Batch, rho: f64, rng: &mut ChaCha8Rng) -> Result<(Batch, Vec<bool>)> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho = {rho} outside [0, 1]")));
    }
    let k = batch.num_classes;
    if k < 2 && rho > 0.0 {
        return Err(Error::InvalidArgument("label noise needs at least two classes".into()));
    }
    let mut out = batch.clone();
    let mut mask = vec![false; batch.len()];
    if rho == 0.0 {
        return Ok((out, mask));
    }
    for i in 0..batch.len() {
        if rng.random::<f64>() < rho {
            let mut new = rng.random_range(0..k - 1);
            if new >= batch.labels[i] {
                new += 1;
            }
            out.labels[i] = new;
            mask[i] = true;
            if let Some(soft) = out.soft_labels.as_mut() {
                let row = soft.row_mut(i);
                row.iter_mut().for_each(|v| *v = 0.0);
                row[new] = 1.0;
            }
        }
    }
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix2D;
    use proptest::prelude::*;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        stream(seed, Purpose::Augment, &[])
    }

    fn batch(n: usize, d: usize, k: usize, seed: u64) -> Batch {
        let mut r = stream(seed, Purpose::Data, &[]);
        let x = Matrix2D::from_vec(n, d, (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let labels = (0..n).map(|_| r.random_range(0..k)).collect();
        Batch::new(x, labels, k).unwrap()
    }

    #[test]
    fn jitter_zero_sigma_is_identity_and_seeded() {
        let b = batch(5, 3, 2, 1);
        assert_eq!(gaussian_jitter(&b, 0.0, &mut rng(1)).unwrap(), b);
        let a1 = gaussian_jitter(&b, 0.5, &mut rng(2)).unwrap();
        let a2 = gaussian_jitter(&b, 0.5, &mut rng(2)).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
        assert_eq!(a1.labels, b.labels);
        assert!(gaussian_jitter(&b, -1.0, &mut rng(2)).is_err());
    }

    #[test]
    fn jitter_noise_has_zero_mean() {
        let sigma = 2.0;
        let b = batch(10_000, 2, 2, 3);
        let a = gaussian_jitter(&b, sigma, &mut rng(4)).unwrap();
        for c in 0..2 {
            let mean: f64 = (0..b.len()).map(|i| a.x.get(i, c) - b.x.get(i, c)).sum::<f64>() / b.len() as f64;
            assert!(mean.abs() <= 4.0 * sigma / 100.0, "{mean}");
        }
    }

    #[test]
    fn cutmix_boundaries() {
        let b = batch(6, 4, 2, 5);
        assert_eq!(cutmix_tabular(&b, 0.0, &[], &mut rng(1)).unwrap(), b);
        let all = cutmix_tabular(&b, 1.0, &[], &mut rng(1)).unwrap();
        for i in 0..6 {
            for c in 0..4 {
                let v = all.x.get(i, c);
                assert!((0..6).filter(|&j| j != i).any(|j| b.x.get(j, c) == v));
            }
        }
        assert_eq!(all.labels, b.labels);
        let single = batch(1, 4, 2, 6);
        assert_eq!(cutmix_tabular(&single, 0.7, &[], &mut rng(1)).unwrap(), single);
    }

    #[test]
    fn cutmix_moves_one_hot_groups_whole() {
        // column 0 continuous, columns 1..4 a three-level one-hot block
        let x = Matrix2D::from_rows(&[
            [0.1, 1.0, 0.0, 0.0],
            [0.2, 0.0, 1.0, 0.0],
            [0.3, 0.0, 0.0, 1.0],
            [0.4, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let b = Batch::new(x, vec![0, 1, 0, 1], 2).unwrap();
        for seed in 0..50 {
            let out = cutmix_tabular(&b, 0.5, &[0..1, 1..4], &mut rng(seed)).unwrap();
            for r in out.x.iter_rows() {
                let block = &r[1..4];
                assert_eq!(block.iter().sum::<f64>(), 1.0);
                assert!(block.iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }

    #[test]
    fn mixup_examples() {
        let b = batch(2, 3, 2, 7);
        let b = Batch::new(b.x, vec![0, 1], 2).unwrap();
        let same = mixup_with(&b, &[1.0, 1.0], &[1, 0]).unwrap();
        assert_eq!(same.x, b.x);
        assert_eq!(same.soft_labels.unwrap(), Matrix2D::one_hot(&[0, 1], 2).unwrap());
        let half = mixup_with(&b, &[0.5, 0.5], &[1, 0]).unwrap();
        assert_eq!(half.soft_labels.unwrap().row(0), &[0.5, 0.5]);
        assert!(mixup(&b, 0.0, &mut rng(0)).is_err());
    }

    #[test]
    fn crop_flip_examples() {
        let mut r = stream(1, Purpose::Data, &[]);
        let x = Matrix2D::from_vec(3, 64, (0..192).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let b = Batch::new(x, vec![0, 1, 0], 2).unwrap();
        assert_eq!(crop_flip(&b, 0, 0.0, &mut rng(1)).unwrap(), b);
        let p = draw_crop_params(2000, 2, 0.5, &mut rng(2));
        assert!(p.iter().all(|&(y, x, _)| y <= 4 && x <= 4));
        for v in 0..=4 {
            assert!(p.iter().any(|&(y, _, _)| y == v));
            assert!(p.iter().any(|&(_, x, _)| x == v));
        }
        assert_eq!(
            crop_flip(&b, 2, 0.5, &mut rng(3)).unwrap(),
            crop_flip(&b, 2, 0.5, &mut rng(3)).unwrap()
        );
        let non_square = batch(2, 5, 2, 0);
        assert!(crop_flip(&non_square, 1, 0.5, &mut rng(0)).is_err());
    }

    #[test]
    fn crop_shift_and_flip_by_hand() {
        // 2x2 image [[1,2],[3,4]], pad 1, offset (0,0) shifts content down-right
        let b = Batch::new(Matrix2D::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap(), vec![0], 1).unwrap();
        let out = crop_flip_with(&b, 1, &[(0, 0, false)]).unwrap();
        assert_eq!(out.x.row(0), &[0.0, 0.0, 0.0, 1.0]);
        let out = crop_flip_with(&b, 1, &[(1, 1, true)]).unwrap();
        assert_eq!(out.x.row(0), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn label_noise_examples() {
        let b = batch(50, 2, 2, 8);
        let (same, mask) = label_noise(&b, 0.0, &mut rng(1)).unwrap();
        assert_eq!(same, b);
        assert!(mask.iter().all(|&m| !m));
        let (flipped, mask) = label_noise(&b, 1.0, &mut rng(1)).unwrap();
        assert!(mask.iter().all(|&m| m));
        for (a, o) in flipped.labels.iter().zip(&b.labels) {
            assert_eq!(*a, 1 - o);
        }
        let one_class = batch(3, 2, 1, 0);
        assert!(label_noise(&one_class, 0.1, &mut rng(0)).is_err());
    }

    #[test]
    fn label_noise_rate() {
        let b = batch(10_000, 1, 4, 9);
        let (out, mask) = label_noise(&b, 0.3, &mut rng(5)).unwrap();
        let rate = mask.iter().filter(|&&m| m).count() as f64 / 10_000.0;
        assert!((rate - 0.3).abs() <= 0.02, "{rate}");
        for i in 0..b.len() {
            assert_eq!(mask[i], out.labels[i] != b.labels[i]);
        }
    }

    #[test]
    fn pipeline_tracks_corruption_and_is_deterministic() {
        let spec = AugmenterSpec {
            seed: 3,
            stages: vec![
                AugmentStage::GaussianJitter { sigma: 0.5 },
                AugmentStage::LabelNoise { rho: 0.3 },
            ],
        };
        let b = batch(64, 2, 2, 10);
        let key = StreamKey::new(0, 1, 2);
        let a = spec.apply(&b, &key, &[]).unwrap();
        assert_eq!(a, spec.apply(&b, &key, &[]).unwrap());
        for i in 0..64 {
            assert_eq!(a.corrupted[i], a.batch.labels[i] != b.labels[i]);
        }
        assert_ne!(a, spec.apply(&b, &StreamKey::new(0, 1, 3), &[]).unwrap());
    }

    #[test]
    fn spec_parses_from_toml() {
        let spec: AugmenterSpec = toml::from_str(
            "seed = 1\n[[stages]]\nkind = \"gaussian_jitter\"\nsigma = 0.5\n[[stages]]\nkind = \"label_noise\"\nrho = 0.3\n",
        )
        .unwrap();
        assert_eq!(spec.stages.len(), 2);
        let bad: std::result::Result<AugmenterSpec, _> =
            toml::from_str("seed = 1\n[[stages]]\nkind = \"gaussian_jitter\"\nsigma = 0.5\nextra = 1\n");
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn augmenters_preserve_shape_and_input(seed in any::<u64>(), which in 0usize..5) {
            let b = batch(9, 16, 3, seed);
            let before = b.clone();
            let mut r = rng(seed);
            let out = match which {
                0 => gaussian_jitter(&b, 1.0, &mut r).unwrap(),
                1 => cutmix_tabular(&b, 0.4, &[], &mut r).unwrap(),
                2 => mixup(&b, 0.4, &mut r).unwrap(),
                3 => crop_flip(&b, 1, 0.5, &mut r).unwrap(),
                _ => label_noise(&b, 0.5, &mut r).unwrap().0,
            };
            prop_assert_eq!(b, before);
            prop_assert_eq!(out.x.shape(), (9, 16));
            prop_assert_eq!(out.labels.len(), 9);
            out.validate().unwrap();
        }
    }
}
