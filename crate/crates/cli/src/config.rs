//! Effective run configuration: built-in defaults, then a JSON config file,
//! then the dataset-root environment variable, then command-line flags.

use std::path::{Path, PathBuf};

use celltissue::tinynet::{ExperimentConfig, SynthParams};
use celltissue::{ConstraintMode, PatchGeometry};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DATA_ROOT_ENV: &str = "CELLTISSUE_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub min_distance_px: usize,
    pub threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            min_distance_px: celltissue::postprocess::DEFAULT_MIN_DISTANCE_PX,
            threshold: celltissue::postprocess::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
    /// Geometry for commands that operate on loose files.
    pub geometry: PatchGeometry,
    pub detect: DetectConfig,
    pub match_radius_px: f64,
    pub label_radius_um: f64,
    pub num_classes: usize,
    pub split_ratios: [f64; 3],
    pub constraint_mode: ConstraintMode,
    pub tiger_cell_side: usize,
    pub tiger_tissue_side: usize,
    pub synth: SynthParams,
    /// Held-out synthetic samples generated after the training samples.
    pub n_test: usize,
    pub experiment: ExperimentConfig,
    pub gradcheck_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            seed: 0,
            jobs: 1,
            geometry: PatchGeometry::default(),
            detect: DetectConfig::default(),
            match_radius_px: celltissue::metrics::DEFAULT_MATCH_RADIUS_PX,
            label_radius_um: 1.4,
            num_classes: celltissue::labels::NUM_CELL_CLASSES,
            split_ratios: [0.6, 0.2, 0.2],
            constraint_mode: ConstraintMode::Symmetric,
            tiger_cell_side: 128,
            tiger_tissue_side: 512,
            synth: SynthParams::default(),
            n_test: 32,
            experiment: ExperimentConfig::default(),
            gradcheck_tolerance: 1e-4,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn root(&self) -> Result<&Path, CliError> {
        self.dataset_root
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("no dataset root: pass --root or set {DATA_ROOT_ENV}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.jobs == 0 {
            return usage("jobs must be at least 1".into());
        }
        if !(self.match_radius_px > 0.0) {
            return usage(format!("match radius must be positive, got {}", self.match_radius_px));
        }
        if !(0.0..=1.0).contains(&self.detect.threshold) {
            return usage(format!("threshold must lie in [0, 1], got {}", self.detect.threshold));
        }
        if let Err(e) = self.geometry.validate() {
            return usage(e.to_string());
        }
        if let Err(e) = self.synth.validate() {
            return usage(e.to_string());
        }
        if let Err(e) = self.experiment.train.validate() {
            return usage(e.to_string());
        }
        if self.experiment.n_runs == 0 {
            return usage("runs must be at least 1".into());
        }
        Ok(())
    }
}
