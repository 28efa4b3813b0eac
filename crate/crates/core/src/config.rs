//! The TOML run configuration.
//!
//! Every section has explicit defaults, shown by `saflex --print-config`.
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentStage, AugmenterSpec};
use crate::data::{
    gen_two_gaussians, gen_two_moons, load_csv, load_images_raw, split, standardize_splits, Dataset,
    SplitSpec, Splits,
};
use crate::saflex::SaflexConfig;
use crate::trainer::RunConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Class means `±(mean, mean)`.
    TwoGaussians { n: usize, mean: f64, sigma: f64, seed: u64 },
    TwoMoons { n: usize, noise: f64, seed: u64 },
    Csv { path: PathBuf, schema: PathBuf },
    Images { path: PathBuf },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::TwoGaussians { n: 2000, mean: 1.0, sigma: 1.0, seed: 0 }
    }
}

impl DataConfig {
    /// Generates or loads the full dataset. Relative paths resolve against
    /// `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DataConfig::TwoGaussians { n, mean, sigma, seed } => {
                gen_two_gaussians(*n, [[-mean, -mean], [*mean, *mean]], *sigma, *seed)
            }
            DataConfig::TwoMoons { n, noise, seed } => gen_two_moons(*n, *noise, *seed),
            DataConfig::Csv { path, schema } => load_csv(&base.join(path), &base.join(schema)),
            DataConfig::Images { path } => load_images_raw(&base.join(path)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Z-score continuous columns with training-split statistics.
    pub standardize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { standardize: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

/// Repeats the run once per value, replacing the `sigma` of the first
/// Gaussian jitter stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default = "default_augment")]
    pub augment: AugmenterSpec,
    #[serde(default)]
    pub saflex: SaflexConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_augment() -> AugmenterSpec {
    AugmenterSpec { seed: 0, stages: vec![AugmentStage::GaussianJitter { sigma: 0.5 }] }
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            split: SplitSpec::default(),
            run: RunConfig::default(),
            augment: default_augment(),
            saflex: SaflexConfig::default(),
            output: OutputConfig::default(),
            sweep: None,
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.split.validate().map_err(wrap)?;
        self.run.validate()?;
        self.augment.validate().map_err(wrap)?;
        self.saflex.validate().map_err(wrap)?;
        if let Some(s) = &self.sweep {
            if s.sigma.is_empty() || s.sigma.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Config("sweep.sigma needs non-negative values".into()));
            }
            if !self.augment.stages.iter().any(|st| matches!(st, AugmentStage::GaussianJitter { .. })) {
                return Err(Error::Config("sweep.sigma needs a gaussian_jitter stage".into()));
            }
        }
        Ok(())
    }

    /// The concrete configs a sweep expands to, each with its own output
    /// directory and no sweep section. Without a sweep this is `[self]`.
    pub fn expand(&self) -> Vec<ConfigFile> {
        let Some(sweep) = &self.sweep else {
            return vec![self.clone()];
        };
        sweep
            .sigma
            .iter()
            .map(|&s| {
                let mut c = self.clone();
                c.sweep = None;
                if let Some(AugmentStage::GaussianJitter { sigma }) = c
                    .augment
                    .stages
                    .iter_mut()
                    .find(|st| matches!(st, AugmentStage::GaussianJitter { .. }))
                {
                    *sigma = s;
                }
                c.output.dir = self.output.dir.join(format!("sigma_{s}"));
                c
            })
            .collect()
    }

    /// Loads the data and returns the (optionally standardised) splits.
    pub fn splits(&self, base: &Path) -> Result<Splits> {
        let ds = self.data.load(base)?;
        let mut s = split(&ds, &self.split)?;
        if self.preprocess.standardize {
            standardize_splits(&mut s);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let d = ConfigFile::default();
        let text = d.to_toml();
        assert_eq!(ConfigFile::parse(&text).unwrap(), d);
        assert_eq!(ConfigFile::parse("").unwrap(), d);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let e = ConfigFile::parse("[run]\nepochz = 3\n").unwrap_err().to_string();
        assert!(e.contains("epochz"), "{e}");
        let e = ConfigFile::parse("bogus = 1\n").unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
    }

    #[test]
    fn missing_required_key_is_named() {
        let e = ConfigFile::parse("[data]\nn = 100\n").unwrap_err().to_string();
        assert!(e.contains("kind"), "{e}");
        let e = ConfigFile::parse("[data]\nkind = \"two_moons\"\nn = 100\nseed = 1\n").unwrap_err().to_string();
        assert!(e.contains("noise"), "{e}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(ConfigFile::parse("[saflex]\ntau = 0.0\n"), Err(Error::Config(_))));
        assert!(ConfigFile::parse("[split]\ntrain = 0.9\nval = 0.2\ntest = 0.2\nseed = 0\n").is_err());
        assert!(ConfigFile::parse("[sweep]\nsigma = []\n").is_err());
    }

    #[test]
    fn sweep_expands_per_sigma() {
        let c = ConfigFile::parse("[sweep]\nsigma = [0.1, 3.0]\n").unwrap();
        let runs = c.expand();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1].augment.stages[0], AugmentStage::GaussianJitter { sigma: 3.0 });
        assert_eq!(runs[0].output.dir, PathBuf::from("runs/default/sigma_0.1"));
        assert!(runs.iter().all(|r| r.sweep.is_none()));
    }
}
