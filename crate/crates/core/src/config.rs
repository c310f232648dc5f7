//! Run configuration, readable from TOML or JSON.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::assignment::MaskFill;
use crate::backbones::{FeatureRequest, DEFAULT_GRID_SIZE, SUPPORTED_RESOLUTIONS};
use crate::clustering::ClusterConfig;
use crate::error::{Error, Result};
use crate::eval::DatasetSpec;
use crate::refine::{CrfParams, PamrParams, RefineConfig, RefineMethod};
use crate::vocabulary::{CandidateFilter, DEFAULT_PROMPT};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateMode {
    /// Label masks with a fixed dataset vocabulary.
    #[default]
    Closed,
    /// Use the caption keywords themselves as the vocabulary.
    Open,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub timestep: u32,
    pub resolutions: BTreeSet<usize>,
    pub grid_size: usize,
    pub k: usize,
    pub seed: u64,
    pub include_attention: bool,
    pub standardize: bool,
    pub max_iters: usize,
    pub tol: f64,
    pub candidate_mode: CandidateMode,
    /// Gate closed-vocabulary labels by the caption; when off every
    /// dataset class is a candidate.
    pub use_caption: bool,
    pub candidate_filter: CandidateFilter,
    pub prompt_template: String,
    pub mask_fill: MaskFill,
    pub refinement: RefineMethod,
    /// Refine each label as its own binary problem.
    pub per_region: bool,
    pub crf: CrfParams,
    pub pamr: PamrParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            timestep: 0,
            resolutions: BTreeSet::from([16]),
            grid_size: DEFAULT_GRID_SIZE,
            k: 4,
            seed: 0,
            include_attention: false,
            standardize: true,
            max_iters: 300,
            tol: 1e-4,
            candidate_mode: CandidateMode::Closed,
            use_caption: true,
            candidate_filter: CandidateFilter::KeywordMean,
            prompt_template: DEFAULT_PROMPT.to_string(),
            mask_fill: MaskFill::Black,
            refinement: RefineMethod::Crf,
            per_region: false,
            crf: CrfParams::default(),
            pamr: PamrParams::default(),
            cache: None,
            dataset: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::InvalidArgument("at least one resolution is required".into()));
        }
        if let Some(r) = self.resolutions.iter().find(|r| !SUPPORTED_RESOLUTIONS.contains(r)) {
            return Err(Error::InvalidArgument(format!(
                "unsupported resolution {r}; expected one of {SUPPORTED_RESOLUTIONS:?}"
            )));
        }
        if self.grid_size == 0 {
            return Err(Error::InvalidArgument("grid_size must be positive".into()));
        }
        if self.k == 0 || self.k > self.grid_size * self.grid_size {
            return Err(Error::InvalidArgument(format!(
                "k = {} must lie in 1..={}",
                self.k,
                self.grid_size * self.grid_size
            )));
        }
        if self.max_iters == 0 || !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument("max_iters must be ≥ 1 and tol ≥ 0".into()));
        }
        if !self.prompt_template.contains("{class}") {
            return Err(Error::InvalidArgument("prompt_template must contain `{class}`".into()));
        }
        self.crf.validate()?;
        if self.pamr.dilations.is_empty() || self.pamr.dilations.contains(&0) {
            return Err(Error::InvalidArgument("PAMR dilations must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_request(&self) -> FeatureRequest {
        FeatureRequest {
            timestep: self.timestep,
            resolutions: self.resolutions.clone(),
            include_attention: self.include_attention,
            grid_size: self.grid_size,
        }
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            k: self.k,
            seed: self.seed,
            max_iters: self.max_iters,
            tol: self.tol,
            standardize: self.standardize,
        }
    }

    pub fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            method: self.refinement,
            crf: self.crf.clone(),
            pamr: self.pamr.clone(),
            per_region: self.per_region,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.timestep, 0);
        assert_eq!(c.resolutions, BTreeSet::from([16]));
        assert_eq!((c.grid_size, c.k), (32, 4));
        assert!(!c.include_attention);
        assert_eq!(c.refinement, RefineMethod::Crf);
        assert_eq!(c.mask_fill, MaskFill::Black);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = PipelineConfig::from_toml("k = 5\nresolutions = [16, 32]\n[crf]\niterations = 2\n").unwrap();
        assert_eq!(p.k, 5);
        assert_eq!(p.crf.iterations, 2);
        assert_eq!(p.crf.w_bilateral, 10.0);
        assert!(PipelineConfig::from_toml("kk = 5").is_err());
    }

    #[test]
    fn validation() {
        let bad = PipelineConfig {
            resolutions: BTreeSet::from([24]),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
