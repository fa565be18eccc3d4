//! Synthetic datasets in the on-disk dump format, for tests and demos.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::io::{write_layerstack, write_logits};
use crate::shuffle::{shuffle_tokens_for_prompt, ShuffleSpec};
use crate::synthetic::{generate_synthetic, ManifoldKind, SyntheticSpec};
use crate::types::{LayerStack, LogitRecord, PointCloud};

use super::manifest::{Manifest, ManifestEntry};
use super::output::safe_name;
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub out_dir: PathBuf,
    pub n_prompts: usize,
    /// Latent dimension of each layer's manifold; one layer per entry.
    pub latent_dims: Vec<usize>,
    pub kind: ManifoldKind,
    pub ambient_dim: usize,
    pub n_tokens: usize,
    pub seed: u64,
    /// Also write logits over a vocabulary of this size.
    pub vocab: Option<usize>,
    /// Shuffle levels to write besides the unshuffled dump. When non-empty
    /// every entry is labeled, the unshuffled one with S = 0.
    pub shuffles: Vec<u32>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [a, b] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

fn synth_stack(cfg: &SynthConfig, prompt: usize, id: &str) -> Result<LayerStack, PipelineError> {
    let layers = cfg
        .latent_dims
        .iter()
        .enumerate()
        .map(|(l, &d)| {
            let spec = SyntheticSpec {
                kind: cfg.kind,
                latent_dim: d,
                ambient_dim: cfg.ambient_dim,
                n_points: cfg.n_tokens,
                seed: mix(cfg.seed, prompt as u64, l as u64),
            };
            generate_synthetic(&spec)
                .map(|c| c.to_f32())
                .map_err(|e| PipelineError::Config(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    LayerStack::new(id, layers).map_err(|e| PipelineError::Config(e.to_string()))
}

/// Logits from a random linear read-out of the last layer; the "true" next
/// token is drawn from the resulting softmax.
fn synth_logits(stack: &LayerStack, vocab: usize, seed: u64) -> Result<LogitRecord, PipelineError> {
    let last = stack.layers().last().expect("non-empty stack");
    let dim = last.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = 3.0 / (dim as f64).sqrt();
    let w: Vec<f64> = (0..dim * vocab)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    let mut logits = Vec::with_capacity(stack.n_tokens() * vocab);
    let mut loglik = Vec::with_capacity(stack.n_tokens());
    for row in last.rows() {
        let z: Vec<f64> = (0..vocab)
            .map(|j| (0..dim).map(|i| row[i] as f64 * w[i * vocab + j]).sum())
            .collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut token = vocab - 1;
        for (j, v) in z.iter().enumerate() {
            acc += (v - lse).exp();
            if u < acc {
                token = j;
                break;
            }
        }
        loglik.push(((z[token] - lse).min(0.0)) as f32);
        logits.extend(z.iter().map(|&v| v as f32));
    }
    LogitRecord::new(stack.n_tokens(), vocab, logits, loglik).map_err(|e| PipelineError::Config(e.to_string()))
}

fn shuffled(stack: &LayerStack, s: u32, seed: u64) -> Result<LayerStack, PipelineError> {
    let spec = ShuffleSpec { s, seed };
    let layers = stack
        .layers()
        .iter()
        .map(|c| {
            let rows: Vec<Vec<f32>> = c.rows().map(<[f32]>::to_vec).collect();
            let rows = shuffle_tokens_for_prompt(&rows, spec, stack.prompt_id())
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            PointCloud::from_rows(&rows).map_err(|e| PipelineError::Config(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    LayerStack::new(stack.prompt_id(), layers).map_err(|e| PipelineError::Config(e.to_string()))
}

/// Writes `synth-XXXX[.sS].tgeo` (and `.tglo`) files plus `manifest.json`
/// into `cfg.out_dir` and returns the manifest.
pub fn write_synthetic_dataset(cfg: &SynthConfig) -> Result<Manifest, PipelineError> {
    if cfg.n_prompts == 0 || cfg.latent_dims.is_empty() {
        return Err(PipelineError::Config("need at least one prompt and one layer".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let io_err = |e: crate::io::FormatError| PipelineError::Config(e.to_string());
    let mut entries = Vec::new();
    for p in 0..cfg.n_prompts {
        let id = format!("synth-{p:04}");
        let stack = synth_stack(cfg, p, &id)?;
        let logits = match cfg.vocab {
            Some(v) => {
                let rec = synth_logits(&stack, v, mix(cfg.seed, p as u64, u64::MAX))?;
                let name = format!("{}.tglo", safe_name(&id));
                write_logits(&rec, cfg.out_dir.join(&name)).map_err(io_err)?;
                Some(PathBuf::from(name))
            }
            None => None,
        };
        let labeled = !cfg.shuffles.is_empty();
        let base_name = if labeled {
            format!("{}.s0.tgeo", safe_name(&id))
        } else {
            format!("{}.tgeo", safe_name(&id))
        };
        write_layerstack(&stack, cfg.out_dir.join(&base_name)).map_err(io_err)?;
        entries.push(ManifestEntry {
            prompt_id: id.clone(),
            layers: base_name.into(),
            logits: logits.clone(),
            n_tokens: Some(cfg.n_tokens),
            shuffle_index: labeled.then_some(0),
            source: serde_json::json!({ "generator": "synthetic", "kind": cfg.kind }),
        });
        for &s in cfg.shuffles.iter().filter(|s| **s > 0) {
            let sh = shuffled(&stack, s, cfg.seed)?;
            let name = format!("{}.s{s}.tgeo", safe_name(&id));
            write_layerstack(&sh, cfg.out_dir.join(&name)).map_err(io_err)?;
            entries.push(ManifestEntry {
                prompt_id: id.clone(),
                layers: name.into(),
                logits: None,
                n_tokens: Some(cfg.n_tokens),
                shuffle_index: Some(s),
                source: serde_json::json!({ "generator": "synthetic", "kind": cfg.kind }),
            });
        }
    }
    let mut manifest = Manifest::new(entries);
    manifest.save(&cfg.out_dir.join("manifest.json"))?;
    manifest.base_dir = cfg.out_dir.clone();
    Ok(manifest)
}
