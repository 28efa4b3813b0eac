//! Independent checks of the assignment rule.
//!
//! Nothing here uses the forward-mode scores of [`crate::saflex`]: the
//! per-class alignment table is rebuilt from one reverse-mode backward pass
//! per `(sample, class)` pair, and the optimum is found by exhaustive search
//! over hard labels and binary weights.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::losses::Batch;
use crate::matrix::{argmax, Matrix2D};
use crate::nn::{mlp_backward, mlp_forward, sgd_step, Architecture, ModelParams, ParamGrad};
use crate::rng::{stream, Purpose, StreamKey};
use crate::saflex::{
    closed_form_assignment, combined_gradient, mean_loss, pi_scores, saflex_assign, PiScores,
    SaflexConfig,
};
use crate::{Error, Result};

pub const MAX_BATCH: usize = 8;
pub const MAX_CLASSES: usize = 6;

/// Hard label and binary weight per augmented sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub labels: Vec<usize>,
    pub kept: Vec<bool>,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Same kept set and the same label on every kept sample. Labels of
    /// dropped samples carry no weight and are ignored.
    pub fn equivalent(&self, other: &Assignment) -> bool {
        self.kept == other.kept
            && self
                .labels
                .iter()
                .zip(&other.labels)
                .zip(&self.kept)
                .all(|((a, b), &k)| !k || a == b)
    }

    /// `Σ_i w_i Π_{i, label_i}` over a score table.
    pub fn objective(&self, table: &Matrix2D) -> f64 {
        (0..self.len())
            .filter(|&i| self.kept[i])
            .map(|i| table.get(i, self.labels[i]))
            .sum()
    }
}

/// Whether the weights may be chosen freely in `[0, 1]` or must sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightConstraint {
    Free,
    SumToOne,
}

fn guard(b: usize, k: usize) -> Result<()> {
    if b > MAX_BATCH || k > MAX_CLASSES {
        return Err(Error::Guard(format!(
            "enumeration limited to B <= {MAX_BATCH}, K <= {MAX_CLASSES}; got B = {b}, K = {k}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    Ok(())
}

/// `⟨∇θ ℓ(x_i, e_k), g_val⟩` for every row and class, one backward pass each.
pub fn objective_table(params: &ModelParams, x_aug: &Matrix2D, g_val: &ParamGrad) -> Result<Matrix2D> {
    let k = params.arch().num_classes();
    let b = x_aug.rows();
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let x = x_aug.select_rows(&[i]);
            let (probs, cache) = mlp_forward(params, &x)?;
            (0..k)
                .map(|c| {
                    let mut d = probs.clone();
                    d.set(0, c, d.get(0, c) - 1.0);
                    mlp_backward(params, &cache, &d)?.dot(g_val)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Matrix2D::from_vec(b, k, rows.concat())
}

/// Exhaustive first-order optimum over vertices, scored with the
/// reverse-mode table.
pub fn enumerate_optimum(
    params: &ModelParams,
    x_aug: &Matrix2D,
    g_val: &ParamGrad,
) -> Result<(Assignment, f64)> {
    guard(x_aug.rows(), params.arch().num_classes())?;
    enumerate_scores(&objective_table(params, x_aug, g_val)?, WeightConstraint::Free)
}

/// Best vertex for a given score table.
///
/// `Free` scans the `K + 1` choices of every sample separately, labels in
/// increasing order then the drop option, keeping the first strict maximum;
/// an exact zero score is kept rather than dropped. `SumToOne` keeps exactly
/// the lowest-indexed `(sample, label)` pair with the largest score.
pub fn enumerate_scores(table: &Matrix2D, constraint: WeightConstraint) -> Result<(Assignment, f64)> {
    let (b, k) = table.shape();
    guard(b, k)?;
    let mut a = Assignment { labels: vec![0; b], kept: vec![false; b] };
    match constraint {
        WeightConstraint::Free => {
            for i in 0..b {
                let mut best = (f64::NEG_INFINITY, 0, false);
                for c in 0..k {
                    if table.get(i, c) > best.0 {
                        best = (table.get(i, c), c, true);
                    }
                }
                if 0.0 > best.0 {
                    best = (0.0, 0, false);
                }
                a.labels[i] = best.1;
                a.kept[i] = best.2;
            }
        }
        WeightConstraint::SumToOne => {
            if b == 0 {
                return Ok((a, 0.0));
            }
            let (mut bi, mut bc) = (0, 0);
            for i in 0..b {
                for c in 0..k {
                    if table.get(i, c) > table.get(bi, bc) {
                        (bi, bc) = (i, c);
                    }
                }
            }
            a.labels[bi] = bc;
            a.kept[bi] = true;
        }
    }
    let value = a.objective(table);
    Ok((a, value))
}

/// Every vertex of the `(K + 1)^B` product, in mixed-radix order with digit
/// `K` meaning "dropped".
pub fn all_assignments(b: usize, k: usize) -> Result<Vec<Assignment>> {
    guard(b, k)?;
    let total = (k + 1).pow(b as u32);
    Ok((0..total)
        .map(|mut code| {
            let mut a = Assignment { labels: vec![0; b], kept: vec![false; b] };
            for i in 0..b {
                let d = code % (k + 1);
                code /= k + 1;
                if d < k {
                    a.labels[i] = d;
                    a.kept[i] = true;
                }
            }
            a
        })
        .collect())
}

/// Maximum of the objective over the full product of per-sample choices.
pub fn enumerate_joint(table: &Matrix2D) -> Result<f64> {
    let (b, k) = table.shape();
    Ok(all_assignments(b, k)?
        .iter()
        .map(|a| a.objective(table))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Central differences `(f(θ + εe_i) − f(θ − εe_i)) / 2ε` per coordinate.
pub fn finite_diff<F>(f: F, params: &ModelParams, eps: f64) -> Result<ParamGrad>
where
    F: Fn(&ModelParams) -> Result<f64> + Sync,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {eps} must be positive")));
    }
    let values: Vec<f64> = (0..params.len())
        .into_par_iter()
        .map(|j| {
            let mut p = params.clone();
            let v0 = p.values()[j];
            p.values_mut()[j] = v0 + eps;
            let up = f(&p)?;
            p.values_mut()[j] = v0 - eps;
            let down = f(&p)?;
            Ok((up - down) / (2.0 * eps))
        })
        .collect::<Result<_>>()?;
    ParamGrad::from_values(params.arch().clone(), values)
}

/// How binary weights become loss weights in the combined step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightNorm {
    /// `w_i / B_aug`: linear in the assignment.
    Fixed,
    /// `w_i / Σ_j w_j`, as in the training step.
    Renormalized,
}

fn assignment_weights(a: &Assignment, norm: WeightNorm) -> Vec<f64> {
    let denom = match norm {
        WeightNorm::Fixed => a.len() as f64,
        WeightNorm::Renormalized => a.kept.iter().filter(|&&k| k).count() as f64,
    };
    a.kept.iter().map(|&k| if k { 1.0 / denom } else { 0.0 }).collect()
}

/// Gradient of the combined loss under a hard assignment.
pub fn assignment_gradient(
    params: &ModelParams,
    train: &Batch,
    aug: &Batch,
    assignment: &Assignment,
    norm: WeightNorm,
) -> Result<ParamGrad> {
    if assignment.len() != aug.len() {
        return Err(Error::shape("one assignment entry per augmented sample"));
    }
    let targets = Matrix2D::one_hot(&assignment.labels, aug.num_classes)?;
    let weights = assignment_weights(assignment, norm);
    let (_, cache) = mlp_forward(params, &train.x.vstack(&aug.x)?)?;
    combined_gradient(params, &cache, train, &targets, &weights).map(|(_, g)| g)
}

/// Validation loss after one exact SGD step of size `alpha` on the combined
/// loss under `assignment`.
pub fn post_step_val_loss(
    params: &ModelParams,
    train: &Batch,
    aug: &Batch,
    assignment: &Assignment,
    val: &Batch,
    alpha: f64,
    norm: WeightNorm,
) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("step size {alpha} < 0")));
    }
    let grad = assignment_gradient(params, train, aug, assignment, norm)?;
    mean_loss(&sgd_step(params, &grad, alpha)?, val)
}

/// A random certification instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub params: ModelParams,
    pub x_aug: Matrix2D,
    pub orig_labels: Vec<usize>,
    pub g_val: ParamGrad,
}

/// Size limits for random instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InstanceShape {
    pub max_batch: usize,
    pub max_classes: usize,
    pub max_params: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self { max_batch: MAX_BATCH, max_classes: MAX_CLASSES, max_params: 500 }
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Matrix2D> {
    Matrix2D::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
}

/// Random MLP with 0 to 2 hidden layers, random inputs and labels, and a
/// standard-normal `g_val`. Deterministic in `(seed, index)`.
pub fn random_instance(seed: u64, index: u64, shape: InstanceShape) -> Result<Instance> {
    guard(shape.max_batch, shape.max_classes)?;
    if shape.max_classes < 2 || shape.max_batch == 0 {
        return Err(Error::InvalidArgument("instances need B >= 1 and K >= 2".into()));
    }
    let mut rng = stream(seed, Purpose::Oracle, &[index]);
    let b = rng.random_range(1..=shape.max_batch);
    let k = rng.random_range(2..=shape.max_classes);
    let d = rng.random_range(1..=6);
    let depth = rng.random_range(0..=2);
    let mut hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=16)).collect();
    let arch = loop {
        let arch = Architecture::mlp(d, &hidden, k)?;
        if arch.param_count() <= shape.max_params {
            break arch;
        }
        for h in hidden.iter_mut() {
            *h = (*h / 2).max(1);
        }
        if hidden.iter().all(|&h| h == 1) && Architecture::mlp(d, &hidden, k)?.param_count() > shape.max_params {
            hidden.clear();
        }
    };
    let mut params = ModelParams::init(arch, rng.random());
    for v in params.values_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += 0.1 * z;
    }
    let x_aug = normal_matrix(b, d, &mut rng)?;
    let orig_labels = (0..b).map(|_| rng.random_range(0..k)).collect();
    let g: Vec<f64> = (0..params.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let g_val = ParamGrad::from_values(params.arch().clone(), g)?;
    Ok(Instance { params, x_aug, orig_labels, g_val })
}

/// Outcome of one instance.
#[derive(Clone, Debug)]
pub struct InstanceCheck {
    /// Enumerated optimum minus the closed-form objective, both on the
    /// reverse-mode table.
    pub gap: f64,
    pub closed_form_equivalent: bool,
    /// The `τ`-softmax assignment decoded by argmax agrees with enumeration.
    pub decoded_equivalent: bool,
    /// Free optimum minus the `Σw = 1` optimum.
    pub sum_to_one_gap: f64,
    pub samples: usize,
    pub kept_sum_rule: usize,
    pub rule_disagreements: usize,
}

pub fn check_instance(inst: &Instance, tau: f64) -> Result<InstanceCheck> {
    let table = objective_table(&inst.params, &inst.x_aug, &inst.g_val)?;
    let (best, opt) = enumerate_scores(&table, WeightConstraint::Free)?;
    let (_, constrained) = enumerate_scores(&table, WeightConstraint::SumToOne)?;
    let pi: PiScores = pi_scores(&inst.params, &inst.x_aug, &inst.g_val)?;
    let (labels, kept) = closed_form_assignment(&pi, &inst.orig_labels, 0.0);
    let closed = Assignment { labels, kept };
    let cfg = SaflexConfig { beta: 0.0, tau, gumbel: false, ..SaflexConfig::default() };
    let out = saflex_assign(&pi, &inst.orig_labels, &cfg, &StreamKey::new(0, 0, 0))?;
    let decoded = Assignment { labels: out.soft_labels.iter_rows().map(argmax).collect(), kept: out.kept };
    let b = inst.x_aug.rows() as f64;
    Ok(InstanceCheck {
        gap: if closed.equivalent(&best) { 0.0 } else { opt - closed.objective(&table) },
        closed_form_equivalent: closed.equivalent(&best),
        decoded_equivalent: decoded.equivalent(&best),
        sum_to_one_gap: opt - constrained,
        samples: inst.x_aug.rows(),
        kept_sum_rule: (out.diagnostics.frac_kept_sum_rule * b).round() as usize,
        rule_disagreements: (out.diagnostics.frac_rule_disagreement * b).round() as usize,
    })
}

#[derive(Clone, Debug)]
pub struct CertificationReport {
    pub instances: usize,
    pub checks: Vec<InstanceCheck>,
}

impl CertificationReport {
    pub fn max_gap(&self) -> f64 {
        self.checks.iter().map(|c| c.gap).fold(0.0, f64::max)
    }

    pub fn value_match_rate(&self) -> f64 {
        self.rate(|c| c.gap == 0.0)
    }

    pub fn closed_form_match_rate(&self) -> f64 {
        self.rate(|c| c.closed_form_equivalent)
    }

    pub fn decoded_match_rate(&self) -> f64 {
        self.rate(|c| c.decoded_equivalent)
    }

    /// Fraction of samples kept by the sum-of-scores rule.
    pub fn sum_rule_keep_rate(&self) -> f64 {
        self.sample_rate(|c| c.kept_sum_rule)
    }

    /// Fraction of samples where the sum-of-scores rule and the `Π·y ≥ 0`
    /// rule disagree.
    pub fn rule_disagreement_rate(&self) -> f64 {
        self.sample_rate(|c| c.rule_disagreements)
    }

    pub fn mean_sum_to_one_gap(&self) -> f64 {
        self.checks.iter().map(|c| c.sum_to_one_gap).sum::<f64>() / self.instances.max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_gap() == 0.0
    }

    fn rate(&self, f: impl Fn(&InstanceCheck) -> bool) -> f64 {
        self.checks.iter().filter(|c| f(c)).count() as f64 / self.instances.max(1) as f64
    }

    fn sample_rate(&self, f: impl Fn(&InstanceCheck) -> usize) -> f64 {
        let total: usize = self.checks.iter().map(|c| c.samples).sum();
        self.checks.iter().map(f).sum::<usize>() as f64 / total.max(1) as f64
    }
}

/// Runs `n` random instances and collects their checks.
pub fn certify(n: usize, seed: u64, shape: InstanceShape, tau: f64) -> Result<CertificationReport> {
    let checks = (0..n as u64)
        .into_par_iter()
        .map(|i| check_instance(&random_instance(seed, i, shape)?, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(CertificationReport { instances: n, checks })
}

/// A small problem with train, augmented and validation batches, for exact
/// post-step comparisons.
#[derive(Clone, Debug)]
pub struct StepInstance {
    pub params: ModelParams,
    pub train: Batch,
    pub aug: Batch,
    pub val: Batch,
}

pub fn random_step_instance(seed: u64, index: u64, max_batch: usize, max_classes: usize) -> Result<StepInstance> {
    guard(max_batch, max_classes)?;
    if max_classes < 2 || max_batch == 0 {
        return Err(Error::InvalidArgument("instances need B >= 1 and K >= 2".into()));
    }
    let mut rng = stream(seed, Purpose::Oracle, &[u64::MAX, index]);
    let b = rng.random_range(1..=max_batch);
    let k = rng.random_range(2..=max_classes);
    let d = rng.random_range(2..=4);
    let arch = Architecture::mlp(d, &[rng.random_range(3..=8)], k)?;
    let params = ModelParams::init(arch, rng.random());
    let mut batch = |n: usize| -> Result<Batch> {
        let x = normal_matrix(n, d, &mut rng)?;
        let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
        Batch::new(x, labels, k)
    };
    Ok(StepInstance { train: batch(4)?, aug: batch(b)?, val: batch(16)?, params })
}

/// Exact post-step losses of every vertex assignment, and the comparison
/// with the closed-form assignment.
#[derive(Clone, Debug)]
pub struct StepCertificate {
    pub alpha: f64,
    pub saflex_loss: f64,
    pub best_loss: f64,
    /// `2·max_a |L(a) − L0 + α⟨g_val, d_a⟩| / α²` over all assignments `a`.
    pub curvature: f64,
}

impl StepCertificate {
    pub fn within_bound(&self) -> bool {
        self.saflex_loss <= self.best_loss + self.curvature * self.alpha * self.alpha + 1e-15
    }
}

pub fn step_certificate(inst: &StepInstance, alpha: f64, norm: WeightNorm) -> Result<StepCertificate> {
    let (l0, g_val) = crate::saflex::validation_loss_and_gradient(&inst.params, &inst.val)?;
    let pi = pi_scores(&inst.params, &inst.aug.x, &g_val)?;
    let (labels, kept) = closed_form_assignment(&pi, &inst.aug.labels, 0.0);
    let chosen = Assignment { labels, kept };
    let all = all_assignments(inst.aug.len(), inst.aug.num_classes)?;
    let rows: Vec<(f64, f64)> = all
        .par_iter()
        .map(|a| {
            let d = assignment_gradient(&inst.params, &inst.train, &inst.aug, a, norm)?;
            let loss = mean_mlp_loss_after(&inst.params, &d, alpha, &inst.val)?;
            Ok((loss, loss - l0 + alpha * g_val.dot(&d)?))
        })
        .collect::<Result<_>>()?;
    let best_loss = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let max_rem = rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
    let saflex_loss = post_step_val_loss(&inst.params, &inst.train, &inst.aug, &chosen, &inst.val, alpha, norm)?;
    Ok(StepCertificate { alpha, saflex_loss, best_loss, curvature: 2.0 * max_rem / (alpha * alpha) })
}

fn mean_mlp_loss_after(params: &ModelParams, d: &ParamGrad, alpha: f64, val: &Batch) -> Result<f64> {
    mean_loss(&sgd_step(params, d, alpha)?, val)
}

/// Richardson estimate of the directional derivative
/// `lim (L0 − L(α)) / α` from steps `α` and `α / 2`.
pub fn richardson_slope(
    inst: &StepInstance,
    assignment: &Assignment,
    alpha: f64,
    norm: WeightNorm,
) -> Result<f64> {
    let l0 = mean_loss(&inst.params, &inst.val)?;
    let slope = |a: f64| -> Result<f64> {
        Ok((l0 - post_step_val_loss(&inst.params, &inst.train, &inst.aug, assignment, &inst.val, a, norm)?) / a)
    };
    Ok(2.0 * slope(alpha / 2.0)? - slope(alpha)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saflex::contrastive::{contrastive_pi_scores, saflex_assign_contrastive};
    use crate::saflex::validation_loss_and_gradient;
    use proptest::prelude::*;
    use rand::Rng;

    fn table(rows: &[&[f64]]) -> Matrix2D {
        Matrix2D::from_rows(rows).unwrap()
    }

    #[test]
    fn negative_scores_drop_everything() {
        let t = table(&[&[-0.1, -2.0], &[-0.3, -0.4]]);
        let (a, v) = enumerate_scores(&t, WeightConstraint::Free).unwrap();
        assert_eq!(a.kept, vec![false, false]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn single_sample_example() {
        let (a, v) = enumerate_scores(&table(&[&[-0.5, 0.5]]), WeightConstraint::Free).unwrap();
        assert_eq!(a, Assignment { labels: vec![1], kept: vec![true] });
        assert_eq!(v, 0.5);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let (a, _) = enumerate_scores(&table(&[&[0.2, 0.2], &[0.0, -1.0]]), WeightConstraint::Free).unwrap();
        assert_eq!(a.labels, vec![0, 0]);
        assert_eq!(a.kept, vec![true, true]);
        let (a, v) = enumerate_scores(&table(&[&[0.1, 0.3], &[0.3, 0.2]]), WeightConstraint::SumToOne).unwrap();
        assert_eq!(a.kept, vec![true, false]);
        assert_eq!(a.labels[0], 1);
        assert_eq!(v, 0.3);
    }

    #[test]
    fn guard_is_enforced() {
        assert!(matches!(
            enumerate_scores(&Matrix2D::zeros(9, 2), WeightConstraint::Free),
            Err(Error::Guard(_))
        ));
        assert!(enumerate_scores(&Matrix2D::zeros(2, 7), WeightConstraint::Free).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let arch = Architecture::new(vec![2, 2]).unwrap();
        let p = ModelParams::init(arch, 3);
        let c: Vec<f64> = (0..p.len()).map(|i| i as f64 - 2.5).collect();
        let lin = |q: &ModelParams| Ok(q.values().iter().zip(&c).map(|(a, b)| a * b).sum());
        let g = finite_diff(lin, &p, 1e-3).unwrap();
        for (a, b) in g.values().iter().zip(&c) {
            assert!((a - b).abs() < 1e-10);
        }
        let zero = ModelParams::zeros(p.arch().clone());
        let quad = |q: &ModelParams| Ok(q.values().iter().map(|v| v * v).sum());
        assert!(finite_diff(quad, &zero, 1e-4).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(finite_diff(quad, &zero, 0.0).is_err());
    }

    #[test]
    fn finite_diff_matches_backward() {
        let inst = random_step_instance(1, 0, 4, 3).unwrap();
        let (_, g) = validation_loss_and_gradient(&inst.params, &inst.val).unwrap();
        let fd = finite_diff(|q| mean_loss(q, &inst.val), &inst.params, 1e-5).unwrap();
        let mut diff = fd.clone();
        diff.axpy(-1.0, &g).unwrap();
        assert!(diff.norm() <= 1e-6 * g.norm().max(1e-12), "{}", diff.norm() / g.norm());
    }

    #[test]
    fn zero_step_and_all_dropped() {
        let inst = random_step_instance(2, 0, 4, 3).unwrap();
        let l0 = mean_loss(&inst.params, &inst.val).unwrap();
        let any = Assignment { labels: vec![0; inst.aug.len()], kept: vec![true; inst.aug.len()] };
        let l = post_step_val_loss(&inst.params, &inst.train, &inst.aug, &any, &inst.val, 0.0, WeightNorm::Fixed)
            .unwrap();
        assert_eq!(l, l0);
        let none = Assignment { labels: vec![0; inst.aug.len()], kept: vec![false; inst.aug.len()] };
        let (_, g_train) = validation_loss_and_gradient(&inst.params, &inst.train).unwrap();
        let plain = mean_loss(&sgd_step(&inst.params, &g_train, 0.1).unwrap(), &inst.val).unwrap();
        for norm in [WeightNorm::Fixed, WeightNorm::Renormalized] {
            let l = post_step_val_loss(&inst.params, &inst.train, &inst.aug, &none, &inst.val, 0.1, norm).unwrap();
            assert!((l - plain).abs() <= 1e-14, "{l} vs {plain}");
        }
    }

    #[test]
    fn reverse_table_matches_forward_scores() {
        for i in 0..20 {
            let inst = random_instance(5, i, InstanceShape::default()).unwrap();
            let t = objective_table(&inst.params, &inst.x_aug, &inst.g_val).unwrap();
            let pi = pi_scores(&inst.params, &inst.x_aug, &inst.g_val).unwrap();
            let scale = t.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            assert!(t.max_abs_diff(pi.as_matrix()) <= 1e-10 * scale);
        }
    }

    #[test]
    fn random_instances_respect_limits() {
        let shape = InstanceShape::default();
        for i in 0..200 {
            let inst = random_instance(9, i, shape).unwrap();
            assert!(inst.params.len() <= shape.max_params);
            assert!(inst.x_aug.rows() <= shape.max_batch);
            assert!((2..=shape.max_classes).contains(&inst.params.arch().num_classes()));
        }
        let bad = InstanceShape { max_classes: 1, ..shape };
        assert!(random_instance(0, 0, bad).is_err());
    }

    #[test]
    fn closed_form_certified_on_a_sample() {
        let r = certify(100, 17, InstanceShape::default(), 0.01).unwrap();
        assert!(r.passed(), "max gap {}", r.max_gap());
        assert_eq!(r.closed_form_match_rate(), 1.0);
        assert!(r.decoded_match_rate() >= 0.95);
        assert!(r.mean_sum_to_one_gap() >= 0.0);
    }

    #[test]
    fn contrastive_closed_form_matches_enumeration() {
        let arch = Architecture::new(vec![3, 6, 4]).unwrap();
        for seed in 0..20u64 {
            let mut enc = ModelParams::init(arch.clone(), seed);
            let mut rng = stream(seed, Purpose::Oracle, &[]);
            for v in enc.values_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
            let b = rng.random_range(1..=6);
            let a = normal_matrix(b, 3, &mut rng).unwrap();
            let p = normal_matrix(b, 3, &mut rng).unwrap();
            let g: Vec<f64> = (0..enc.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let g = ParamGrad::from_values(arch.clone(), g).unwrap();
            let pi = contrastive_pi_scores(&enc, &a, &p, &g, 0.5).unwrap();
            let (best, _) = enumerate_scores(pi.as_matrix(), WeightConstraint::Free).unwrap();
            let identity: Vec<usize> = (0..b).collect();
            let (labels, kept) = closed_form_assignment(&pi, &identity, 0.0);
            assert!(Assignment { labels, kept }.equivalent(&best));
            let cfg = SaflexConfig { tau: 1e-6, gumbel: false, ..SaflexConfig::default() };
            let out = saflex_assign_contrastive(&pi, &cfg, &StreamKey::new(0, 0, 0)).unwrap();
            assert_eq!(out.kept, best.kept);
        }
    }

    #[test]
    fn richardson_slope_matches_first_order_term() {
        for i in 0..10 {
            let inst = random_step_instance(3, i, 4, 3).unwrap();
            let (_, g_val) = validation_loss_and_gradient(&inst.params, &inst.val).unwrap();
            let a = Assignment { labels: inst.aug.labels.clone(), kept: vec![true; inst.aug.len()] };
            let d = assignment_gradient(&inst.params, &inst.train, &inst.aug, &a, WeightNorm::Fixed).unwrap();
            let exact = g_val.dot(&d).unwrap();
            let est = richardson_slope(&inst, &a, 1e-3, WeightNorm::Fixed).unwrap();
            assert!((est - exact).abs() <= 1e-3 * exact.abs().max(1e-8), "{est} vs {exact}");
        }
    }

    #[test]
    fn step_certificate_holds_on_small_instances() {
        for i in 0..5 {
            let inst = random_step_instance(4, i, 3, 3).unwrap();
            let c = step_certificate(&inst, 1e-3, WeightNorm::Fixed).unwrap();
            assert!(c.within_bound(), "{c:?}");
        }
    }

    proptest! {
        #[test]
        fn per_sample_optimum_equals_joint_optimum(
            b in 1usize..=4,
            k in 1usize..=4,
            vals in proptest::collection::vec(-1.0f64..1.0, 16),
        ) {
            let t = Matrix2D::from_vec(b, k, vals[..b * k].to_vec()).unwrap();
            let (_, v) = enumerate_scores(&t, WeightConstraint::Free).unwrap();
            prop_assert_eq!(v, enumerate_joint(&t).unwrap());
        }

        #[test]
        fn objective_is_permutation_invariant(
            vals in proptest::collection::vec(-1.0f64..1.0, 15),
            shift in 1usize..5,
        ) {
            let t = Matrix2D::from_vec(5, 3, vals).unwrap();
            let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
            let (_, v) = enumerate_scores(&t, WeightConstraint::Free).unwrap();
            let (_, vp) = enumerate_scores(&t.select_rows(&perm), WeightConstraint::Free).unwrap();
            prop_assert!((v - vp).abs() <= 1e-12);
        }
    }
}
