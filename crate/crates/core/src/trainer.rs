//! Epoch loop: minibatches, upstream augmentation, the chosen update rule and
//! per-epoch metrics.

use std::io::Write;
use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugmenterSpec;
use crate::data::Dataset;
use crate::losses::{ce_grad_logits, weighted_soft_ce_logits, Batch};
use crate::matrix::{argmax, Matrix2D};
use crate::nn::{mlp_backward, mlp_forward, Architecture, ModelParams, ParamGrad};
use crate::rng::{stream, Purpose, StreamKey};
use crate::saflex::{combined_gradient, saflex_direction, SaflexConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Train on the original minibatch only.
    None,
    /// Train on the minibatch plus every augmented sample at equal weight.
    Naive,
    Saflex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Record wall-clock seconds per epoch; when false the column is 0 so the
    /// metrics file is reproducible byte for byte.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            optimizer: OptimizerConfig::Sgd { lr: 0.1, momentum: 0.0 },
            epochs: 20,
            batch_size: 32,
            mode: Mode::Saflex,
            seed: 0,
            timing: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.optimizer.validate()
    }
}

pub const METRICS_HEADER: &str =
    "epoch,train_loss,val_loss,test_acc,mean_w,frac_zero_w,frac_label_changed,sec_per_epoch";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_acc: f64,
    /// Mean pre-normalisation weight of the augmented samples.
    pub mean_w: f64,
    pub frac_zero_w: f64,
    pub frac_label_changed: f64,
    pub sec_per_epoch: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.val_loss,
            self.test_acc,
            self.mean_w,
            self.frac_zero_w,
            self.frac_label_changed,
            self.sec_per_epoch
        )
    }
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Counts over every augmented sample SAFLEX saw during the run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelabelStats {
    pub samples: usize,
    pub corrupted: usize,
    pub changed: usize,
    pub changed_and_corrupted: usize,
    pub dropped: usize,
    pub dropped_and_corrupted: usize,
}

impl RelabelStats {
    /// Share of label changes that hit a corrupted sample.
    pub fn change_precision(&self) -> Option<f64> {
        (self.changed > 0).then(|| self.changed_and_corrupted as f64 / self.changed as f64)
    }

    /// Share of corrupted samples whose label was changed.
    pub fn change_recall(&self) -> Option<f64> {
        (self.corrupted > 0).then(|| self.changed_and_corrupted as f64 / self.corrupted as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub history: Vec<MetricsRow>,
    pub relabel: RelabelStats,
}

/// Train, validation and test splits for one run.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: &'a Dataset,
}

/// Mean cross-entropy and top-1 accuracy.
pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::EmptyBatch("evaluation set"));
    }
    let (probs, cache) = mlp_forward(params, &ds.x)?;
    let w = vec![1.0 / ds.len() as f64; ds.len()];
    let loss = weighted_soft_ce_logits(cache.logits(), &w, &Matrix2D::one_hot(&ds.labels, ds.num_classes)?)?;
    let correct = probs.iter_rows().zip(&ds.labels).filter(|(p, &l)| argmax(p) == l).count();
    Ok((loss, correct as f64 / ds.len() as f64))
}

/// Draws validation minibatches without replacement, reshuffling after each
/// full pass.
struct ValidationSampler {
    seed: u64,
    n: usize,
    pass: u64,
    order: Vec<usize>,
    at: usize,
}

impl ValidationSampler {
    fn new(seed: u64, n: usize) -> Self {
        let mut s = Self { seed, n, pass: 0, order: Vec::new(), at: 0 };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut stream(self.seed, Purpose::ValidationDraw, &[self.pass]));
        self.pass += 1;
        self.at = 0;
    }

    fn draw(&mut self, size: usize) -> Vec<usize> {
        if size >= self.n {
            return (0..self.n).collect();
        }
        if self.at + size > self.n {
            self.reshuffle();
        }
        let idx = self.order[self.at..self.at + size].to_vec();
        self.at += size;
        idx
    }
}

enum Optimizer {
    Sgd { lr: f64, momentum: f64, velocity: Vec<f64> },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    fn new(cfg: &OptimizerConfig, n: usize) -> Self {
        match *cfg {
            OptimizerConfig::Sgd { lr, momentum } => Optimizer::Sgd { lr, momentum, velocity: vec![0.0; n] },
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                Optimizer::Adam { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
            }
        }
    }

    fn step(&mut self, params: &mut ModelParams, grad: &ParamGrad) {
        let g = grad.values();
        match self {
            Optimizer::Sgd { lr, momentum, velocity } => {
                for ((p, v), &gi) in params.values_mut().iter_mut().zip(velocity.iter_mut()).zip(g) {
                    *v = *momentum * *v + gi;
                    *p -= *lr * *v;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (((p, mi), vi), &gi) in params.values_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                    *mi = *beta1 * *mi + (1.0 - *beta1) * gi;
                    *vi = *beta2 * *vi + (1.0 - *beta2) * gi * gi;
                    *p -= *lr * (*mi / c1) / ((*vi / c2).sqrt() + *eps);
                }
            }
        }
    }
}

/// Mean cross-entropy gradient of a plain minibatch.
fn plain_gradient(params: &ModelParams, batch: &Batch) -> Result<(f64, ParamGrad)> {
    let (probs, cache) = mlp_forward(params, &batch.x)?;
    let w = vec![1.0 / batch.len() as f64; batch.len()];
    let y = batch.targets();
    let loss = weighted_soft_ce_logits(cache.logits(), &w, &y)?;
    let d = ce_grad_logits(&probs, &w, &y)?;
    Ok((loss, mlp_backward(params, &cache, &d)?))
}

fn divergence(epoch: usize, batch: usize, what: &str) -> Error {
    Error::Divergence(format!("{what} is not finite at epoch {epoch}, batch {batch}"))
}

#[derive(Default)]
struct EpochAccumulator {
    loss_sum: f64,
    batches: usize,
    aug: usize,
    kept: usize,
    changed: usize,
}

/// Runs `cfg.epochs` epochs and returns the final parameters and one metrics
/// row per epoch.
pub fn train(cfg: &RunConfig, augment: &AugmenterSpec, saflex: &SaflexConfig, data: TrainData<'_>) -> Result<TrainOutput> {
    cfg.validate()?;
    augment.validate()?;
    if cfg.mode == Mode::Saflex {
        saflex.validate()?;
        if data.val.is_empty() {
            return Err(Error::EmptyBatch("validation set"));
        }
    }
    if data.train.is_empty() {
        return Err(Error::EmptyBatch("training set"));
    }
    let arch = Architecture::mlp(data.train.num_features(), &cfg.hidden, data.train.num_classes)?;
    let mut params = ModelParams::init(arch, cfg.seed);
    let mut opt = Optimizer::new(&cfg.optimizer, params.len());
    let groups: Vec<Range<usize>> = data.train.mix_groups();
    let mut sampler = ValidationSampler::new(cfg.seed, data.val.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut relabel = RelabelStats::default();
    let n = data.train.len();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, &[epoch as u64]));
        let mut acc = EpochAccumulator::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let key = StreamKey::new(cfg.seed, epoch as u64, b as u64);
            let batch = data.train.batch(idx);
            let (loss, grad) = match cfg.mode {
                Mode::None => plain_gradient(&params, &batch)?,
                Mode::Naive => {
                    let aug = augment.apply(&batch, &key, &groups)?.batch;
                    let (_, cache) = mlp_forward(&params, &batch.x.vstack(&aug.x)?)?;
                    let w = vec![1.0 / aug.len() as f64; aug.len()];
                    acc.aug += aug.len();
                    acc.kept += aug.len();
                    combined_gradient(&params, &cache, &batch, &aug.targets(), &w)?
                }
                Mode::Saflex => {
                    let augmented = augment.apply(&batch, &key, &groups)?;
                    let val = data.val.batch(&sampler.draw(saflex.val_batch_size));
                    let dir = saflex_direction(&params, &batch, &augmented.batch, &val, saflex, &key)?;
                    let out = &dir.output;
                    acc.aug += out.kept.len();
                    acc.kept += out.kept.iter().filter(|&&k| k).count();
                    acc.changed += out.label_changed.iter().filter(|&&c| c).count();
                    for ((&c, &k), &bad) in out.label_changed.iter().zip(&out.kept).zip(&augmented.corrupted) {
                        relabel.samples += 1;
                        relabel.corrupted += bad as usize;
                        relabel.changed += c as usize;
                        relabel.changed_and_corrupted += (c && bad) as usize;
                        relabel.dropped += !k as usize;
                        relabel.dropped_and_corrupted += (!k && bad) as usize;
                    }
                    (dir.combined_loss, dir.grad)
                }
            };
            if !loss.is_finite() {
                return Err(divergence(epoch, b, "training loss"));
            }
            if !grad.is_finite() {
                return Err(divergence(epoch, b, "gradient"));
            }
            opt.step(&mut params, &grad);
            acc.loss_sum += loss;
            acc.batches += 1;
        }
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(divergence(epoch, acc.batches, "parameter vector"));
        }
        let val_loss = if data.val.is_empty() { f64::NAN } else { evaluate(&params, data.val)?.0 };
        let test_acc = if data.test.is_empty() { f64::NAN } else { evaluate(&params, data.test)?.1 };
        let aug = acc.aug.max(1) as f64;
        let row = MetricsRow {
            epoch,
            train_loss: acc.loss_sum / acc.batches.max(1) as f64,
            val_loss,
            test_acc,
            mean_w: acc.kept as f64 / aug,
            frac_zero_w: if acc.aug == 0 { 0.0 } else { (acc.aug - acc.kept) as f64 / aug },
            frac_label_changed: acc.changed as f64 / aug,
            sec_per_epoch: if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} acc {:.4} keep {:.3} changed {:.3}",
            row.train_loss,
            row.val_loss,
            row.test_acc,
            row.mean_w,
            row.frac_label_changed
        );
        history.push(row);
    }
    Ok(TrainOutput { params, history, relabel })
}
