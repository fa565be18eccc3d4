//! Population statistics over prompt profiles, grouped by shuffle index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::entropy::EntropyReport;

use super::profile::GeometryProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub shuffle_index: Option<u32>,
    pub n_prompts: usize,
    pub prompt_ids: Vec<String>,
    pub layers: Vec<LayerSummary>,
    /// Prompt-level entropy statistics, when logits were available.
    pub entropy: BTreeMap<String, Stat>,
}

/// Named scalar metrics of every layer of a profile.
pub fn layer_metrics(profile: &GeometryProfile) -> Vec<BTreeMap<String, f64>> {
    profile
        .per_layer
        .iter()
        .map(|l| {
            let mut m = BTreeMap::new();
            for e in &l.id_estimates {
                if let Some(d) = e.d_hat {
                    m.insert(format!("id_s{}", e.n2), d);
                }
            }
            if let Some(c) = l.mean_cosine {
                m.insert("cosine".into(), c);
            }
            for o in &l.overlap_next {
                m.insert(format!("overlap_k{}", o.k), o.chi);
            }
            if let Some(a) = l.angle_mean_deg {
                m.insert("angle_mean_deg".into(), a);
            }
            m.insert("degenerate_count".into(), l.degenerate_count as f64);
            m
        })
        .collect()
}

/// Summarizes one group, in the order the members are given.
pub fn summarize_group(
    shuffle_index: Option<u32>,
    members: &[(&GeometryProfile, Option<&EntropyReport>)],
) -> GroupSummary {
    let per_prompt: Vec<Vec<BTreeMap<String, f64>>> = members.iter().map(|(p, _)| layer_metrics(p)).collect();
    let n_layers = per_prompt.iter().map(Vec::len).max().unwrap_or(0);
    let layers = (0..n_layers)
        .map(|layer| {
            let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for prompt in &per_prompt {
                if let Some(m) = prompt.get(layer) {
                    for (name, v) in m {
                        values.entry(name.clone()).or_default().push(*v);
                    }
                }
            }
            LayerSummary {
                layer,
                metrics: values
                    .into_iter()
                    .filter_map(|(k, v)| Stat::of(&v).map(|s| (k, s)))
                    .collect(),
            }
        })
        .collect();

    let mut entropy = BTreeMap::new();
    let ce: Vec<f64> = members
        .iter()
        .filter_map(|(_, e)| e.map(|r| r.avg_cross_entropy))
        .collect();
    let ctx: Vec<f64> = members
        .iter()
        .filter_map(|(_, e)| e.map(|r| r.avg_contextual_entropy))
        .collect();
    if let Some(s) = Stat::of(&ce) {
        entropy.insert("avg_cross_entropy".to_string(), s);
    }
    if let Some(s) = Stat::of(&ctx) {
        entropy.insert("avg_contextual_entropy".to_string(), s);
    }

    GroupSummary {
        shuffle_index,
        n_prompts: members.len(),
        prompt_ids: members.iter().map(|(p, _)| p.prompt_id.clone()).collect(),
        layers,
        entropy,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDelta {
    pub layer: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDelta {
    pub shuffle_index: u32,
    pub layers: Vec<LayerDelta>,
}

/// Mean of `group` minus mean of `baseline`, per layer and shared metric.
pub fn delta(group: &GroupSummary, baseline: &GroupSummary) -> Vec<LayerDelta> {
    group
        .layers
        .iter()
        .filter_map(|l| {
            let base = baseline.layers.get(l.layer)?;
            let metrics = l
                .metrics
                .iter()
                .filter_map(|(k, s)| base.metrics.get(k).map(|b| (k.clone(), s.mean - b.mean)))
                .collect();
            Some(LayerDelta {
                layer: l.layer,
                metrics,
            })
        })
        .collect()
}
