//! Datasets: synthetic 2-D tasks, schema-driven CSV tables, raw images and
//! stratified splits.

mod raw;
mod tabular;

use std::ops::Range;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::losses::Batch;
use crate::matrix::Matrix2D;
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

pub use raw::{load_images_raw, read_images_raw, write_images_raw, IMAGE_MAGIC};
pub use tabular::{
    load_csv, load_csv_encoded, load_csv_with_encoding, parse_schema, write_csv, ColumnKind,
    ColumnSpec, TabularEncoding,
};

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureKind {
    Continuous,
    Categorical { levels: Vec<String> },
}

/// A named block of feature columns. Categorical features span one column per
/// level.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGroup {
    pub name: String,
    pub kind: FeatureKind,
    pub columns: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix2D,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub groups: Vec<FeatureGroup>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Matrix2D,
        labels: Vec<usize>,
        num_classes: usize,
        groups: Vec<FeatureGroup>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::shape(format!("{} labels for {} rows", labels.len(), x.rows())));
        }
        if class_names.len() != num_classes {
            return Err(Error::shape("one class name per class"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside [0, {num_classes})")));
        }
        let mut next = 0;
        for g in &groups {
            if g.columns.start != next || g.columns.end <= g.columns.start {
                return Err(Error::Schema(format!("feature group {} is not contiguous", g.name)));
            }
            next = g.columns.end;
        }
        if next != x.cols() {
            return Err(Error::Schema(format!("groups cover {next} of {} columns", x.cols())));
        }
        Ok(Self { x, labels, num_classes, groups, class_names })
    }

    /// Continuous groups named `x0, x1, ...` and classes named by index.
    pub fn plain(x: Matrix2D, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let groups = (0..x.cols())
            .map(|c| FeatureGroup { name: format!("x{c}"), kind: FeatureKind::Continuous, columns: c..c + 1 })
            .collect();
        let names = (0..num_classes).map(|k| k.to_string()).collect();
        Self::new(x, labels, num_classes, groups, names)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            groups: self.groups.clone(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Rows `idx` as a hard-label batch.
    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            soft_labels: None,
            weights: None,
        }
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            x: self.x.clone(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            soft_labels: None,
            weights: None,
        }
    }

    /// Column ranges of the categorical groups, plus one single-column range
    /// per continuous column.
    pub fn mix_groups(&self) -> Vec<Range<usize>> {
        self.groups.iter().map(|g| g.columns.clone()).collect()
    }
}

/// Z-score statistics of the continuous columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    /// `(column, mean, std)`; a zero std is stored as 1.
    pub columns: Vec<(usize, f64, f64)>,
}

impl Standardizer {
    /// Population mean and standard deviation of each continuous column.
    pub fn fit(ds: &Dataset) -> Self {
        let n = ds.len().max(1) as f64;
        let mut columns = Vec::new();
        for g in ds.groups.iter().filter(|g| g.kind == FeatureKind::Continuous) {
            for c in g.columns.clone() {
                let mean = ds.x.iter_rows().map(|r| r[c]).sum::<f64>() / n;
                let var = ds.x.iter_rows().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                columns.push((c, mean, if std > 0.0 { std } else { 1.0 }));
            }
        }
        Self { columns }
    }

    pub fn apply(&self, ds: &mut Dataset) {
        for r in 0..ds.x.rows() {
            let row = ds.x.row_mut(r);
            for &(c, mean, std) in &self.columns {
                row[c] = (row[c] - mean) / std;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !(*v >= 0.0)) || !(self.train > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "split fractions {f:?} must be non-negative with a positive train share"
            )));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split fractions {f:?} do not sum to 1")));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Row indices of the source dataset in each split.
    pub indices: [Vec<usize>; 3],
    pub warnings: Vec<String>,
}

const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Seeded, label-stratified partition. Each class is shuffled and cut by
/// largest remainder; a split with a positive fraction always receives at
/// least one sample when the dataset has enough rows.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let frac = spec.fractions();
    let mut parts: [Vec<Vec<usize>>; 3] = Default::default();
    for k in 0..ds.num_classes {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == k).collect();
        members.shuffle(&mut stream(spec.seed, Purpose::Split, &[k as u64]));
        let n = members.len();
        let ideal: Vec<f64> = frac.iter().map(|f| f * n as f64).collect();
        let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = ideal[a] - counts[a] as f64;
            let rb = ideal[b] - counts[b] as f64;
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let mut left = n - counts.iter().sum::<usize>();
        for &s in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if frac[s] > 0.0 {
                counts[s] += 1;
                left -= 1;
            }
        }
        let mut at = 0;
        for s in 0..3 {
            parts[s].push(members[at..at + counts[s]].to_vec());
            at += counts[s];
        }
    }
    for s in 0..3 {
        if frac[s] > 0.0 && parts[s].iter().all(Vec::is_empty) {
            let donor = (0..3)
                .filter(|&d| d != s)
                .max_by_key(|&d| (parts[d].iter().map(Vec::len).sum::<usize>(), usize::MAX - d))
                .unwrap();
            let k = (0..ds.num_classes).max_by_key(|&k| (parts[donor][k].len(), usize::MAX - k)).unwrap();
            if parts[donor][k].len() > 1 {
                let moved = parts[donor][k].pop().unwrap();
                parts[s][k].push(moved);
            }
        }
    }
    let mut warnings = Vec::new();
    for s in 0..3 {
        if frac[s] == 0.0 {
            continue;
        }
        for k in 0..ds.num_classes {
            if parts[s][k].is_empty() {
                warnings.push(format!("{} split has no samples of class {}", SPLIT_NAMES[s], ds.class_names[k]));
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let indices = parts.map(|p| {
        let mut v: Vec<usize> = p.into_iter().flatten().collect();
        v.sort_unstable();
        v
    });
    Ok(Splits {
        train: ds.select(&indices[0]),
        val: ds.select(&indices[1]),
        test: ds.select(&indices[2]),
        indices,
        warnings,
    })
}

/// Z-scores the continuous columns of every split with training statistics.
pub fn standardize_splits(splits: &mut Splits) -> Standardizer {
    let st = Standardizer::fit(&splits.train);
    st.apply(&mut splits.train);
    st.apply(&mut splits.val);
    st.apply(&mut splits.test);
    st
}

/// Balanced binary task, class `c` drawn from `N(means[c], σ² I)` in 2-D.
/// Row `i` belongs to class `i mod 2`.
pub fn gen_two_gaussians(n: usize, means: [[f64; 2]; 2], sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma} must be positive")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream(seed, Purpose::Data, &[0]);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        for mean in means[c] {
            data.push(mean + normal.sample(&mut rng));
        }
        labels.push(c);
    }
    Dataset::plain(Matrix2D::from_vec(n, 2, data)?, labels, 2)
}

/// Two interleaved half circles with isotropic Gaussian noise.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise = {noise} must be non-negative")));
    }
    let mut rng = stream(seed, Purpose::Data, &[1]);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let per_class = n.div_ceil(2);
    for i in 0..n {
        let c = i % 2;
        let t = std::f64::consts::PI * (i / 2) as f64 / (per_class.max(2) - 1) as f64;
        let (x, y) = if c == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        data.push(x + noise * unit.sample(&mut rng));
        data.push(y + noise * unit.sample(&mut rng));
        labels.push(c);
    }
    Dataset::plain(Matrix2D::from_vec(n, 2, data)?, labels, 2)
}
