use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cnn::{TrainConfig, DEFAULT_WIDTHS};
use crate::error::{Error, Result};
use crate::features::{ChannelLayout, FeatureSet};
use crate::rainmask::{DEFAULT_EPS_EDGE, DEFAULT_EPS_RAIN};
use crate::superpixel::DEFAULT_COMPACTNESS;

/// All tunables of the pipeline. Every field has a default, so a TOML file
/// only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Buffer window length, odd.
    pub n_t: usize,
    /// Patch box side.
    pub n_x: usize,
    /// Search range, even.
    pub n_s: usize,
    /// Sorted matches kept for the detail feature.
    pub n_st: usize,
    pub sp_count: usize,
    pub compactness: f64,
    pub eps_rain: f64,
    pub eps_e: f64,
    /// Leave the whole centre frame out of the sorted-match pool.
    pub t1_exclude_current_frame: bool,
    pub features: FeatureSet,
    /// Widths of the three hidden layers.
    pub cnn_widths: Vec<usize>,
    pub model_path: Option<PathBuf>,
    /// Seed for weight initialization.
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_t: 5,
            n_x: 80,
            n_s: 30,
            n_st: 10,
            sp_count: 300,
            compactness: DEFAULT_COMPACTNESS,
            eps_rain: DEFAULT_EPS_RAIN,
            eps_e: DEFAULT_EPS_EDGE,
            t1_exclude_current_frame: false,
            features: FeatureSet::ALL,
            cnn_widths: DEFAULT_WIDTHS[..3].to_vec(),
            model_path: None,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_t < 3 || self.n_t % 2 == 0 {
            return bad(format!("n_t must be odd and >= 3, got {}", self.n_t));
        }
        if self.n_x == 0 {
            return bad("n_x must be positive".into());
        }
        if self.n_s % 2 != 0 {
            return bad(format!("n_s must be even, got {}", self.n_s));
        }
        if self.n_st == 0 {
            return bad("n_st must be >= 1".into());
        }
        if self.sp_count == 0 {
            return bad("sp_count must be >= 1".into());
        }
        if !(self.eps_rain > 0.0 && self.eps_e > 0.0 && self.compactness > 0.0) {
            return bad("thresholds and compactness must be positive".into());
        }
        if !(self.features.f1 || self.features.f2 || self.features.f3) {
            return bad("at least one feature group is required".into());
        }
        if self.cnn_widths.len() != 3 || self.cnn_widths.contains(&0) {
            return bad("cnn_widths needs three non-zero hidden widths".into());
        }
        Ok(())
    }

    /// Channel layout the configured features produce.
    pub fn layout(&self) -> ChannelLayout {
        ChannelLayout::new(self.n_t, self.n_st).with_groups(self.features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let d = PipelineConfig::default();
        assert_eq!((d.n_t, d.n_x, d.n_s, d.n_st, d.sp_count), (5, 80, 30, 10, 300));
        assert_eq!(d.layout().channels(), 15);
        let c = PipelineConfig::from_toml_str("n_x = 24\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.n_x, 24);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 50);
    }

    #[test]
    fn invalid_rejected() {
        for text in ["n_t = 4", "n_t = 1", "n_s = 7", "n_st = 0", "bogus = 1"] {
            assert!(PipelineConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
