//! Dense ReLU MLP classifier with reverse-mode gradients and forward-mode
//! Jacobian-vector products of the logits.
//!
//! Parameters live in one flat `Vec<f64>`. Layer `l` occupies
//! `[W_l (n_out x n_in, row-major), b_l (n_out)]`, layers in order. The network
//! maps `x` to logits `z`, and probabilities are `softmax(z)`. Hidden layers use
//! ReLU with `relu'(0) = 0`; the output layer is affine.
//!
//! Batch operations parallelise over independent rows or output units only, and
//! every sum runs in a fixed index order, so results do not depend on the number
//! of worker threads.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use rand::Rng;
use rayon::prelude::*;

use crate::matrix::{softmax_rows, Matrix2D};
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

/// Layer widths `[input, hidden.., classes]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl Architecture {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "an architecture needs at least input and output widths".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive: {dims:?}"
            )));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        offsets.push(0);
        for w in dims.windows(2) {
            acc += w[0] * w[1] + w[1];
            offsets.push(acc);
        }
        Ok(Self { dims, offsets })
    }

    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(classes);
        Self::new(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Total parameter count `m`.
    pub fn param_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// `(n_out, n_in)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.dims[l + 1], self.dims[l])
    }

    fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (n_out, n_in) = self.layer_shape(l);
        let start = self.offsets[l];
        let mid = start + n_out * n_in;
        (start..mid, mid..mid + n_out)
    }
}

/// Read-only view of one layer inside a flat parameter vector.
#[derive(Clone, Copy, Debug)]
pub struct LayerRef<'a> {
    pub weight: &'a [f64],
    pub bias: &'a [f64],
    pub n_out: usize,
    pub n_in: usize,
}

impl LayerRef<'_> {
    pub fn weight_matrix(&self) -> Matrix2D {
        Matrix2D::from_vec(self.n_out, self.n_in, self.weight.to_vec())
            .expect("layer weights are finite")
    }
}

fn layer_view<'a>(arch: &Architecture, values: &'a [f64], l: usize) -> LayerRef<'a> {
    let (n_out, n_in) = arch.layer_shape(l);
    let (w, b) = arch.layer_ranges(l);
    LayerRef {
        weight: &values[w],
        bias: &values[b],
        n_out,
        n_in,
    }
}

/// Model parameters θ.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

/// A vector in parameter space with the layout of [`ModelParams`]: gradients,
/// tangents and update directions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    arch: Architecture,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        let values = vec![0.0; arch.param_count()];
        Self { arch, values }
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::shape(format!(
                "architecture has {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(Self { arch, values })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = stream(seed, Purpose::Init, &[]);
        let mut params = Self::zeros(arch);
        for l in 0..params.arch.num_layers() {
            let (n_out, n_in) = params.arch.layer_shape(l);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let (w, _) = params.arch.layer_ranges(l);
            for v in &mut params.values[w] {
                *v = rng.random_range(-limit..limit);
            }
        }
        params
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layer(&self, l: usize) -> LayerRef<'_> {
        layer_view(&self.arch, &self.values, l)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self + scale * dir`.
    pub fn offset(&self, dir: &ParamGrad, scale: f64) -> Result<Self> {
        check_same(&self.arch, &dir.arch)?;
        let values = self
            .values
            .iter()
            .zip(&dir.values)
            .map(|(p, d)| p + scale * d)
            .collect();
        Ok(Self {
            arch: self.arch.clone(),
            values,
        })
    }
}

impl ParamGrad {
    pub fn zeros(arch: Architecture) -> Self {
        let values = vec![0.0; arch.param_count()];
        Self { arch, values }
    }

    pub fn zeros_like(params: &ModelParams) -> Self {
        Self::zeros(params.arch.clone())
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::shape(format!(
                "architecture has {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layer(&self, l: usize) -> LayerRef<'_> {
        layer_view(&self.arch, &self.values, l)
    }

    pub fn dot(&self, other: &ParamGrad) -> Result<f64> {
        param_dot(self, other)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamGrad) -> Result<()> {
        check_same(&self.arch, &other.arch)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn check_same(a: &Architecture, b: &Architecture) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!(
            "parameter layouts differ: {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    Ok(())
}

/// Intermediate values of a batch forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `inputs[l]` is the input of layer `l`; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix2D>,
    /// Pre-activations of every layer; the last entry holds the logits.
    pre: Vec<Matrix2D>,
    probs: Matrix2D,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.probs.rows()
    }

    pub fn input(&self) -> &Matrix2D {
        &self.inputs[0]
    }

    pub fn logits(&self) -> &Matrix2D {
        self.pre.last().unwrap()
    }

    pub fn probs(&self) -> &Matrix2D {
        &self.probs
    }

    pub fn pre_activations(&self) -> &[Matrix2D] {
        &self.pre
    }

    /// Inputs of every layer, starting with the batch.
    pub fn layer_inputs(&self) -> &[Matrix2D] {
        &self.inputs
    }
}

/// `out[i] = W a[i] + b`, rows in parallel.
fn affine_rows(a: &Matrix2D, layer: LayerRef<'_>) -> Matrix2D {
    let n_in = layer.n_in;
    let mut out = Matrix2D::zeros(a.rows(), layer.n_out);
    out.as_mut_slice()
        .par_chunks_mut(layer.n_out)
        .enumerate()
        .for_each(|(i, row)| {
            let x = &a.as_slice()[i * n_in..(i + 1) * n_in];
            for (o, z) in row.iter_mut().enumerate() {
                let w = &layer.weight[o * n_in..(o + 1) * n_in];
                let mut acc = layer.bias[o];
                for (wj, xj) in w.iter().zip(x) {
                    acc += wj * xj;
                }
                *z = acc;
            }
        });
    out
}

/// Evaluates the network on every row of `x`, returning probabilities and the
/// cache needed by [`mlp_backward`] and [`jvp_logits`].
pub fn mlp_forward(params: &ModelParams, x: &Matrix2D) -> Result<(Matrix2D, ForwardCache)> {
    let arch = params.arch();
    if x.cols() != arch.input_dim() {
        return Err(Error::shape(format!(
            "input has {} features, network expects {}",
            x.cols(),
            arch.input_dim()
        )));
    }
    let n_layers = arch.num_layers();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    inputs.push(x.clone());
    for l in 0..n_layers {
        let z = affine_rows(&inputs[l], params.layer(l));
        if l + 1 < n_layers {
            inputs.push(z.map(|v| v.max(0.0)));
        }
        pre.push(z);
    }
    let probs = softmax_rows(pre.last().unwrap());
    let cache = ForwardCache { inputs, pre, probs };
    Ok((cache.probs.clone(), cache))
}

/// Logits only, without keeping a cache.
pub fn mlp_logits(params: &ModelParams, x: &Matrix2D) -> Result<Matrix2D> {
    let (_, mut cache) = mlp_forward(params, x)?;
    Ok(cache.pre.pop().unwrap())
}

/// Gradient, summed over the batch, of the scalar loss whose gradient with
/// respect to the logits is `dlogits`.
pub fn mlp_backward(
    params: &ModelParams,
    cache: &ForwardCache,
    dlogits: &Matrix2D,
) -> Result<ParamGrad> {
    let arch = params.arch();
    let batch = cache.batch_size();
    if dlogits.shape() != (batch, arch.num_classes()) {
        return Err(Error::shape(format!(
            "logit gradient is {:?}, expected ({batch}, {})",
            dlogits.shape(),
            arch.num_classes()
        )));
    }
    let mut grad = ParamGrad::zeros(arch.clone());
    let mut delta = dlogits.clone();
    for l in (0..arch.num_layers()).rev() {
        let (_, n_in) = arch.layer_shape(l);
        let a = &cache.inputs[l];
        let (w_range, b_range) = arch.layer_ranges(l);
        {
            let gw = &mut grad.values[w_range];
            gw.par_chunks_mut(n_in).enumerate().for_each(|(o, row)| {
                for i in 0..batch {
                    let d = delta.get(i, o);
                    if d != 0.0 {
                        for (g, x) in row.iter_mut().zip(a.row(i)) {
                            *g += d * x;
                        }
                    }
                }
            });
        }
        for (o, gb) in grad.values[b_range].iter_mut().enumerate() {
            for i in 0..batch {
                *gb += delta.get(i, o);
            }
        }
        if l == 0 {
            break;
        }
        let layer = params.layer(l);
        let z_prev = &cache.pre[l - 1];
        let mut next = Matrix2D::zeros(batch, n_in);
        next.as_mut_slice()
            .par_chunks_mut(n_in)
            .enumerate()
            .for_each(|(i, row)| {
                let d = delta.row(i);
                for (o, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        let w = &layer.weight[o * n_in..(o + 1) * n_in];
                        for (r, wj) in row.iter_mut().zip(w) {
                            *r += dv * wj;
                        }
                    }
                }
                for (r, &z) in row.iter_mut().zip(z_prev.row(i)) {
                    if z <= 0.0 {
                        *r = 0.0;
                    }
                }
            });
        delta = next;
    }
    Ok(grad)
}

fn jvp_row(params: &ModelParams, cache: &ForwardCache, row: usize, tangent: &ParamGrad) -> Vec<f64> {
    let arch = params.arch();
    let n_layers = arch.num_layers();
    let mut h_dot: Vec<f64> = Vec::new();
    for l in 0..n_layers {
        let layer = params.layer(l);
        let t = tangent.layer(l);
        let h = cache.inputs[l].row(row);
        let n_in = layer.n_in;
        let mut z_dot = vec![0.0; layer.n_out];
        for (o, zd) in z_dot.iter_mut().enumerate() {
            let w = &layer.weight[o * n_in..(o + 1) * n_in];
            let w_dot = &t.weight[o * n_in..(o + 1) * n_in];
            let mut acc = t.bias[o];
            for (wd, x) in w_dot.iter().zip(h) {
                acc += wd * x;
            }
            if l > 0 {
                for (wj, hd) in w.iter().zip(&h_dot) {
                    acc += wj * hd;
                }
            }
            *zd = acc;
        }
        if l + 1 < n_layers {
            for (zd, &z) in z_dot.iter_mut().zip(cache.pre[l].row(row)) {
                if z <= 0.0 {
                    *zd = 0.0;
                }
            }
        }
        h_dot = z_dot;
    }
    h_dot
}

/// Directional derivative of the logits of sample `row` of the cached batch
/// along `tangent`: `u = (∂z/∂θ) · tangent`, one dual-number forward pass.
pub fn jvp_logits(
    params: &ModelParams,
    cache: &ForwardCache,
    row: usize,
    tangent: &ParamGrad,
) -> Result<Vec<f64>> {
    check_same(params.arch(), tangent.arch())?;
    if row >= cache.batch_size() {
        return Err(Error::shape(format!(
            "row {row} outside cached batch of {}",
            cache.batch_size()
        )));
    }
    if cache.inputs[0].cols() != params.arch().input_dim() {
        return Err(Error::shape("cache does not match the parameters"));
    }
    Ok(jvp_row(params, cache, row, tangent))
}

/// [`jvp_logits`] for every row of the cached batch.
pub fn jvp_logits_batch(
    params: &ModelParams,
    cache: &ForwardCache,
    tangent: &ParamGrad,
) -> Result<Matrix2D> {
    jvp_logits_rows(params, cache, 0..cache.batch_size(), tangent)
}

/// [`jvp_logits`] for a contiguous range of cached rows.
pub fn jvp_logits_rows(
    params: &ModelParams,
    cache: &ForwardCache,
    rows: std::ops::Range<usize>,
    tangent: &ParamGrad,
) -> Result<Matrix2D> {
    check_same(params.arch(), tangent.arch())?;
    if rows.end > cache.batch_size() {
        return Err(Error::shape("row range outside cached batch"));
    }
    let k = params.arch().num_classes();
    let mut out = Matrix2D::zeros(rows.len(), k);
    let start = rows.start;
    out.as_mut_slice()
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(i, dst)| dst.copy_from_slice(&jvp_row(params, cache, start + i, tangent)));
    Ok(out)
}

/// Forward pass plus JVP for a single feature vector.
pub fn jvp_logits_at(params: &ModelParams, x: &[f64], tangent: &ParamGrad) -> Result<Vec<f64>> {
    let xm = Matrix2D::from_vec(1, x.len(), x.to_vec())?;
    let (_, cache) = mlp_forward(params, &xm)?;
    jvp_logits(params, &cache, 0, tangent)
}

/// `θ − α·grad`.
pub fn sgd_step(params: &ModelParams, grad: &ParamGrad, lr: f64) -> Result<ModelParams> {
    params.offset(grad, -lr)
}

/// Euclidean inner product over all parameters.
pub fn param_dot(a: &ParamGrad, b: &ParamGrad) -> Result<f64> {
    check_same(&a.arch, &b.arch)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum())
}
