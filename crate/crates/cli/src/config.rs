//! Declarative pipeline configuration. Every key mirrors a CLI flag; flags
//! passed on the command line override config-file values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use panodent_core::augment::AugmentStrategy;
use panodent_core::eval::IouMode;
use panodent_core::split::SplitRatio;

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub synthesize: SynthSection,
    #[serde(default)]
    pub evaluate: EvalSection,
    #[serde(default)]
    pub postprocess: PostprocSection,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub target_size: Option<u32>,
    pub margin_frac: Option<f64>,
    pub pad_value: Option<u8>,
    pub equalize: Option<bool>,
    /// image id -> [x, y, w, h] region of interest overrides.
    #[serde(default)]
    pub roi: BTreeMap<u64, [f64; 4]>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub ratios: Option<Vec<SplitRatio>>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub rotation_range_deg: Option<f64>,
    pub translation_range_frac: Option<f64>,
    pub enable_translation: Option<bool>,
    pub noise_sigma: Option<f64>,
    pub contrast_lo: Option<f64>,
    pub contrast_hi: Option<f64>,
    pub strategy: Option<AugmentStrategy>,
    pub copies_uniform: Option<u32>,
    pub copies_deciduous: Option<u32>,
    pub copies_other: Option<u32>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub age_tolerance_years: Option<u32>,
    pub overlap_rejection_iou: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub iou_threshold: Option<f64>,
    pub iou_mode: Option<IouMode>,
    pub score_floor: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocSection {
    pub x_mid: Option<f64>,
    pub y_mid: Option<f64>,
    pub dead_zone: Option<f64>,
    /// image id -> [x_mid, y_mid] overrides.
    #[serde(default)]
    pub geometry_overrides: BTreeMap<u64, (f64, f64)>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))
    }
}

/// Check that every input path exists, collecting all failures so they can
/// be reported together before any work starts.
pub fn validate_input_paths(paths: &[(&str, &PathBuf)]) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|(_, p)| !p.exists())
        .map(|(name, p)| format!("--{name}: path does not exist: {}", p.display()))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        anyhow::bail!("configuration errors:\n  {}", missing.join("\n  "))
    }
}
