//! End-to-end analysis over a manifest of dumps.
//!
//! [`analyze`] computes one [`GeometryProfile`] per dump plus a population
//! summary, [`compare_shuffles`] contrasts shuffle levels against the
//! structured (S = 0) dumps, and [`correlate`] relates per-layer ID to
//! next-token loss across prompts. Per-prompt failures are quarantined into
//! `errors.json` and the run continues.

mod fixture;
mod manifest;
pub mod output;
mod profile;
mod run;
mod summary;

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{write_synthetic_dataset, SynthConfig};
pub use manifest::{Manifest, ManifestEntry, MANIFEST_SCHEMA_VERSION};
pub use profile::{compute_profile, GeometryProfile, IdAtScale, LayerGeometry, OverlapAtK};
pub use run::{
    analyze, compare_shuffles, correlate, ComparisonFile, CorrelationFile, EntropyFile, ErrorsFile, MissingEntry,
    Quarantined, RunOutcome, SummaryFile,
};
pub use summary::{GroupDelta, GroupSummary, LayerDelta, LayerSummary, Stat};

pub const PROFILE_SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;
/// Prompt length of the reference experiments.
pub const REFERENCE_TOKENS: usize = 1024;
pub const MIN_TOKENS: usize = 64;
pub const MAX_K: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("need at least {needed} prompts with profiles and logits, have {have}")]
    InsufficientPopulation { needed: usize, have: usize },
    #[error("manifest entry {0:?} has no shuffle_index")]
    MissingShuffleLabel(String),
}

/// Which geometric observables to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    pub id: bool,
    /// Neighborhood overlap between consecutive layers.
    pub overlap: bool,
    pub cosine: bool,
    pub angles: bool,
}

impl MetricSet {
    pub fn all() -> Self {
        Self {
            id: true,
            overlap: true,
            cosine: true,
            angles: true,
        }
    }

    pub fn none() -> Self {
        Self {
            id: false,
            overlap: false,
            cosine: false,
            angles: false,
        }
    }
}

impl Default for MetricSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FromStr for MetricSet {
    type Err = String;

    /// Comma-separated subset of `id`, `no`, `cosine`, `angles`.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut m = MetricSet::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "id" => m.id = true,
                "no" | "overlap" => m.overlap = true,
                "cosine" => m.cosine = true,
                "angles" => m.angles = true,
                other => return Err(format!("unknown metric {other:?}")),
            }
        }
        if m == MetricSet::none() {
            return Err("no metrics selected".into());
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    /// JSON plus plot-ready CSVs.
    Csv,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub metrics: MetricSet,
    /// GRIDE range scalings `n2`.
    pub scalings: Vec<usize>,
    /// Neighborhood sizes for the overlap.
    pub ks: Vec<usize>,
    /// Shuffle levels to compare; empty means every level present.
    pub shuffles: Vec<u32>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses all cores.
    pub threads: Option<usize>,
    pub format: OutputFormat,
    /// Correlate `ln(ID)` rather than raw ID.
    pub log_id: bool,
    /// Permutation p-values with this many shuffles.
    pub permutations: Option<usize>,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            metrics: MetricSet::all(),
            scalings: vec![2],
            ks: vec![2],
            shuffles: Vec::new(),
            out_dir: out_dir.into(),
            seed: 0,
            threads: None,
            format: OutputFormat::Json,
            log_id: true,
            permutations: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.scalings.is_empty() {
            return Err(PipelineError::Config("empty scaling list".into()));
        }
        if let Some(s) = self.scalings.iter().find(|s| **s < 2 || !s.is_power_of_two()) {
            return Err(PipelineError::Config(format!("scaling {s} is not a power of two >= 2")));
        }
        if self.ks.is_empty() {
            return Err(PipelineError::Config("empty k list".into()));
        }
        if let Some(k) = self.ks.iter().find(|k| !(1..=MAX_K).contains(*k)) {
            return Err(PipelineError::Config(format!("k = {k} outside 1..={MAX_K}")));
        }
        if self.threads == Some(0) {
            return Err(PipelineError::Config("thread budget must be positive".into()));
        }
        if self.permutations == Some(0) {
            return Err(PipelineError::Config("permutation count must be positive".into()));
        }
        Ok(())
    }
}
