use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tkg_core::backends::{BackendConfig, SamplerConfig, ARBITRATION_TEMPERATURE, DEFAULT_SAMPLES, EXTRACTION_TEMPERATURE};
use tkg_core::extractor::DEFAULT_THRESHOLD;
use tkg_core::pipeline::DEFAULT_BATCH;
use tkg_core::retrieval::DEFAULT_TOP_K;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub n_samples: usize,
    pub extraction_temperature: f64,
    pub arbitration_temperature: f64,
    pub confidence_threshold: f64,
    pub top_k: usize,
    pub min_similarity: Option<f64>,
    pub cutoff: Option<NaiveDate>,
    pub limit: usize,
    pub batch: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            n_samples: DEFAULT_SAMPLES,
            extraction_temperature: EXTRACTION_TEMPERATURE,
            arbitration_temperature: ARBITRATION_TEMPERATURE,
            confidence_threshold: DEFAULT_THRESHOLD,
            top_k: DEFAULT_TOP_K,
            min_similarity: None,
            cutoff: None,
            limit: 100,
            batch: DEFAULT_BATCH,
        }
    }
}

/// Everything a run depends on besides its input files. Reports embed the
/// effective value so a run can be repeated from its output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for data-parallel stages; unset means one per core.
    pub workers: Option<usize>,
    pub paths: Paths,
    pub pipeline: PipelineParams,
    pub backends: BackendConfig,
    /// Directory that relative backend paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig { base_dir: PathBuf::from("."), ..RunConfig::default() });
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.base_dir.as_os_str().is_empty() {
            cfg.base_dir = PathBuf::from(".");
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        if p.n_samples == 0 {
            bail!("pipeline.n_samples must be at least 1");
        }
        for (name, t) in [("extraction_temperature", p.extraction_temperature), ("arbitration_temperature", p.arbitration_temperature)] {
            if !t.is_finite() || t < 0.0 {
                bail!("pipeline.{name} must be a non-negative number, got {t}");
            }
        }
        if !(0.0..=1.0).contains(&p.confidence_threshold) {
            bail!("pipeline.confidence_threshold must lie in [0, 1], got {}", p.confidence_threshold);
        }
        if p.top_k == 0 {
            bail!("pipeline.top_k must be at least 1");
        }
        if p.batch == 0 {
            bail!("pipeline.batch must be at least 1");
        }
        if let Some(s) = p.min_similarity {
            if !(-1.0..=1.0).contains(&s) {
                bail!("pipeline.min_similarity must lie in [-1, 1], got {s}");
            }
        }
        if self.workers == Some(0) {
            bail!("workers must be at least 1");
        }
        Ok(())
    }

    pub fn extraction_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            n_samples: self.pipeline.n_samples,
            temperature: self.pipeline.extraction_temperature,
            ..self.backends.sampler_defaults()
        }
    }

    pub fn arbitration_sampler(&self) -> SamplerConfig {
        SamplerConfig { n_samples: 1, temperature: self.pipeline.arbitration_temperature, ..self.backends.sampler_defaults() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        let mut cfg = RunConfig::default();
        cfg.pipeline.confidence_threshold = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.pipeline.n_samples = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 3").is_err());
        let cfg: RunConfig = toml::from_str("seed = 3\n[pipeline]\ncutoff = \"2020-06-30\"\n").unwrap();
        assert_eq!(cfg.pipeline.cutoff, Some(NaiveDate::from_ymd_opt(2020, 6, 30).unwrap()));
    }
}
