use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::id::{sweep_at, ScaleSweep};
use crate::neighbors::{knn, mean_cosine_similarity, nn_angles, NeighborGraph};
use crate::overlap::neighborhood_overlap;
use crate::types::{Coord, LayerStack, PointCloud};

use super::{MetricSet, PROFILE_SCHEMA_VERSION, REFERENCE_TOKENS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdAtScale {
    pub n1: usize,
    pub n2: usize,
    pub d_hat: Option<f64>,
    pub n_used: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapAtK {
    pub k: usize,
    pub chi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub layer: usize,
    pub id_estimates: Vec<IdAtScale>,
    pub mean_cosine: Option<f64>,
    /// Overlap with the next layer; empty for the last layer.
    pub overlap_next: Vec<OverlapAtK>,
    pub angle_mean_deg: Option<f64>,
    /// Tokens whose nearest neighbor is at distance zero.
    pub degenerate_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryProfile {
    pub schema_version: u32,
    pub prompt_id: String,
    pub shuffle_index: Option<u32>,
    pub n_tokens: usize,
    pub dim: usize,
    /// Only prompts of exactly 1024 tokens match the reference setup.
    pub comparable_to_reference: bool,
    pub per_layer: Vec<LayerGeometry>,
}

impl GeometryProfile {
    /// GRIDE estimate at range scaling `n2` for `layer`, if it succeeded.
    pub fn id_at(&self, layer: usize, n2: usize) -> Option<f64> {
        self.per_layer
            .get(layer)?
            .id_estimates
            .iter()
            .find(|e| e.n2 == n2)?
            .d_hat
    }
}

pub(crate) fn sweep_entries(sweep: &ScaleSweep) -> Vec<IdAtScale> {
    sweep
        .entries
        .iter()
        .map(|e| match &e.result {
            Ok(est) => IdAtScale {
                n1: e.n1,
                n2: e.n2,
                d_hat: Some(est.d_hat),
                n_used: Some(est.n_used),
                error: None,
            },
            Err(err) => IdAtScale {
                n1: e.n1,
                n2: e.n2,
                d_hat: None,
                n_used: None,
                error: Some(err.to_string()),
            },
        })
        .collect()
}

/// Neighbor count needed to serve the selected metrics.
pub(crate) fn graph_k(metrics: &MetricSet, scalings: &[usize], ks: &[usize]) -> usize {
    let mut k = 1;
    if metrics.id {
        k = k.max(scalings.iter().copied().max().unwrap_or(2));
    }
    if metrics.overlap {
        k = k.max(ks.iter().copied().max().unwrap_or(2));
    }
    if metrics.angles {
        k = k.max(2);
    }
    k
}

/// GRIDE sweep of a single cloud (used for logits).
pub(crate) fn cloud_ids<T: Coord>(cloud: &PointCloud<T>, scalings: &[usize]) -> Result<Vec<IdAtScale>, String> {
    let k = scalings.iter().copied().max().unwrap_or(2);
    let g = knn(cloud, k).map_err(|e| e.to_string())?;
    let sweep = sweep_at(&g, scalings).map_err(|e| e.to_string())?;
    Ok(sweep_entries(&sweep))
}

pub fn compute_profile(
    stack: &LayerStack,
    shuffle_index: Option<u32>,
    metrics: &MetricSet,
    scalings: &[usize],
    ks: &[usize],
) -> Result<GeometryProfile, String> {
    let k = graph_k(metrics, scalings, ks);
    let graphs: Vec<NeighborGraph> = stack
        .layers()
        .par_iter()
        .map(|c| knn(c, k))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;

    let per_layer = stack
        .layers()
        .par_iter()
        .zip(graphs.par_iter())
        .enumerate()
        .map(|(layer, (cloud, graph))| -> Result<LayerGeometry, String> {
            let id_estimates = if metrics.id {
                sweep_entries(&sweep_at(graph, scalings).map_err(|e| e.to_string())?)
            } else {
                Vec::new()
            };
            let mean_cosine = if metrics.cosine {
                mean_cosine_similarity(cloud).ok().map(|c| c.mean)
            } else {
                None
            };
            let angle_mean_deg = if metrics.angles {
                nn_angles(cloud, graph)
                    .ok()
                    .map(|a| a.mean_angle_deg)
                    .filter(|v| v.is_finite())
            } else {
                None
            };
            let overlap_next = match graphs.get(layer + 1) {
                Some(next) if metrics.overlap => ks
                    .iter()
                    .map(|&k| {
                        neighborhood_overlap(graph, next, k)
                            .map(|chi| OverlapAtK { k, chi })
                            .map_err(|e| e.to_string())
                    })
                    .collect::<Result<_, _>>()?,
                _ => Vec::new(),
            };
            Ok(LayerGeometry {
                layer,
                id_estimates,
                mean_cosine,
                overlap_next,
                angle_mean_deg,
                degenerate_count: graph.duplicate_count(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(GeometryProfile {
        schema_version: PROFILE_SCHEMA_VERSION,
        prompt_id: stack.prompt_id().to_string(),
        shuffle_index,
        n_tokens: stack.n_tokens(),
        dim: stack.dim(),
        comparable_to_reference: stack.n_tokens() == REFERENCE_TOKENS,
        per_layer,
    })
}
