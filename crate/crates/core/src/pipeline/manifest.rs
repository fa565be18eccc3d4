//! The JSON manifest listing a dataset's dumps.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "prompts": [
//!     {
//!       "prompt_id": "pile-00042",
//!       "layers": "pile-00042.s0.tgeo",
//!       "logits": "pile-00042.tglo",
//!       "n_tokens": 1024,
//!       "shuffle_index": 0,
//!       "source": { "model": "...", "dataset": "..." }
//!     }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. `logits`,
//! `n_tokens`, `shuffle_index` and `source` are optional.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub prompt_id: String,
    pub layers: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_index: Option<u32>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub source: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub prompts: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(prompts: Vec<ManifestEntry>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            prompts,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(PipelineError::Manifest(format!(
                "unsupported manifest schema_version {}",
                m.schema_version
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &m.prompts {
            if e.prompt_id.is_empty() {
                return Err(PipelineError::Manifest("empty prompt_id".into()));
            }
            if !seen.insert((e.prompt_id.clone(), e.shuffle_index)) {
                return Err(PipelineError::Manifest(format!(
                    "duplicate entry for prompt {:?} at shuffle index {:?}",
                    e.prompt_id, e.shuffle_index
                )));
            }
        }
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        super::output::write_json(path, self)
    }
}
