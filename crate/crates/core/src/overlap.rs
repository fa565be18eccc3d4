//! Neighborhood overlap between two representations of the same tokens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neighbors::{knn, NeighborError, NeighborGraph};
use crate::types::LayerStack;

pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverlapError {
    #[error("k must be positive")]
    ZeroK,
    #[error("graphs cover {0} and {1} tokens")]
    TokenMismatch(usize, usize),
    #[error("k = {k} exceeds a graph's neighbor count {available}")]
    KTooLarge { k: usize, available: usize },
    #[error("overlap profile needs at least two layers, got {0}")]
    SingleLayer(usize),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
}

/// Fraction of each token's first `k` neighbors that the two graphs share,
/// averaged over tokens.
pub fn neighborhood_overlap(a: &NeighborGraph, b: &NeighborGraph, k: usize) -> Result<f64, OverlapError> {
    if k == 0 {
        return Err(OverlapError::ZeroK);
    }
    if a.n_points() != b.n_points() {
        return Err(OverlapError::TokenMismatch(a.n_points(), b.n_points()));
    }
    let available = a.k().min(b.k());
    if k > available {
        return Err(OverlapError::KTooLarge { k, available });
    }
    let shared: usize = (0..a.n_points())
        .map(|i| {
            let nb = &b.neighbors(i)[..k];
            a.neighbors(i)[..k].iter().filter(|j| nb.contains(j)).count()
        })
        .sum();
    Ok(shared as f64 / (a.n_points() * k) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapProfile {
    pub k: usize,
    /// `chi[l]` compares layer `l` with layer `l + 1`.
    pub chi: Vec<f64>,
}

/// Overlap between consecutive graphs.
pub fn overlap_between_layers(graphs: &[NeighborGraph], k: usize) -> Result<OverlapProfile, OverlapError> {
    if graphs.len() < 2 {
        return Err(OverlapError::SingleLayer(graphs.len()));
    }
    let chi = graphs
        .windows(2)
        .map(|w| neighborhood_overlap(&w[0], &w[1], k))
        .collect::<Result<_, _>>()?;
    Ok(OverlapProfile { k, chi })
}

/// Profiles for several `k` from one set of graphs built at the largest `k`.
pub fn overlap_k_sweep(stack: &LayerStack, ks: &[usize]) -> Result<Vec<OverlapProfile>, OverlapError> {
    let k_max = ks.iter().copied().max().ok_or(OverlapError::ZeroK)?;
    if ks.contains(&0) {
        return Err(OverlapError::ZeroK);
    }
    if stack.n_layers() < 2 {
        return Err(OverlapError::SingleLayer(stack.n_layers()));
    }
    let graphs = stack
        .layers()
        .par_iter()
        .map(|c| knn(c, k_max))
        .collect::<Result<Vec<_>, _>>()?;
    ks.iter().map(|&k| overlap_between_layers(&graphs, k)).collect()
}

pub fn overlap_profile(stack: &LayerStack, k: usize) -> Result<OverlapProfile, OverlapError> {
    if k == 0 {
        return Err(OverlapError::ZeroK);
    }
    if stack.n_layers() < 2 {
        return Err(OverlapError::SingleLayer(stack.n_layers()));
    }
    let graphs = stack
        .layers()
        .par_iter()
        .map(|c| knn(c, k))
        .collect::<Result<Vec<_>, _>>()?;
    overlap_between_layers(&graphs, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic, ManifoldKind, SyntheticSpec};
    use crate::types::PointCloud;

    fn graph(rows: &[&[usize]]) -> NeighborGraph {
        let k = rows[0].len();
        NeighborGraph::from_parts(
            k,
            1,
            rows.iter().map(|r| r.to_vec()).collect(),
            rows.iter().map(|_| (1..=k).map(|v| v as f64).collect()).collect(),
        )
        .unwrap()
    }

    fn random_layer(seed: u64, n: usize) -> PointCloud<f32> {
        generate_synthetic(&SyntheticSpec {
            kind: ManifoldKind::Gaussian,
            latent_dim: 16,
            ambient_dim: 16,
            n_points: n,
            seed,
        })
        .unwrap()
        .to_f32()
    }

    #[test]
    fn hand_enumerated_four_tokens() {
        // A=0, B=1, C=2, D=3
        let l = graph(&[&[1], &[0], &[3], &[2]]);
        let m = graph(&[&[1], &[2], &[1], &[2]]);
        assert_eq!(neighborhood_overlap(&l, &m, 1).unwrap(), 0.5);
        assert_eq!(neighborhood_overlap(&m, &l, 1).unwrap(), 0.5);
    }

    #[test]
    fn self_overlap_is_one_and_disjoint_is_zero() {
        let l = graph(&[&[1, 2], &[0, 2], &[0, 1], &[1, 2]]);
        assert_eq!(neighborhood_overlap(&l, &l, 2).unwrap(), 1.0);
        assert_eq!(neighborhood_overlap(&l, &l, 1).unwrap(), 1.0);
        let m = graph(&[&[3], &[3], &[3], &[0]]);
        let l1 = graph(&[&[1], &[0], &[0], &[1]]);
        assert_eq!(neighborhood_overlap(&l1, &m, 1).unwrap(), 0.0);
    }

    #[test]
    fn error_paths() {
        let l = graph(&[&[1], &[0], &[0]]);
        let m = graph(&[&[1], &[0], &[3], &[2]]);
        assert_eq!(neighborhood_overlap(&l, &m, 1), Err(OverlapError::TokenMismatch(3, 4)));
        assert_eq!(neighborhood_overlap(&l, &l, 0), Err(OverlapError::ZeroK));
        assert_eq!(
            neighborhood_overlap(&l, &l, 2),
            Err(OverlapError::KTooLarge { k: 2, available: 1 })
        );
    }

    #[test]
    fn identical_layers_profile_is_all_ones() {
        let c = random_layer(1, 100);
        let stack = LayerStack::new("p", vec![c.clone(), c.clone(), c]).unwrap();
        assert_eq!(overlap_profile(&stack, 2).unwrap().chi, vec![1.0, 1.0]);
    }

    #[test]
    fn profile_rejects_single_layer_and_zero_k() {
        let stack = LayerStack::new("p", vec![random_layer(1, 10)]).unwrap();
        assert_eq!(overlap_profile(&stack, 2), Err(OverlapError::SingleLayer(1)));
        let stack = LayerStack::new("p", vec![random_layer(1, 10), random_layer(2, 10)]).unwrap();
        assert_eq!(overlap_profile(&stack, 0), Err(OverlapError::ZeroK));
    }

    #[test]
    fn independent_layers_overlap_near_null() {
        let layers = (0..3).map(|s| random_layer(40 + s, 1024)).collect();
        let stack = LayerStack::new("p", layers).unwrap();
        for chi in overlap_profile(&stack, 2).unwrap().chi {
            assert!(chi < 0.01, "{chi}");
        }
    }

    #[test]
    fn k_sweep_varies_smoothly() {
        // Each layer is the previous one plus small noise.
        let base = random_layer(3, 400);
        let mut layers = vec![base.clone()];
        for s in 0..4u64 {
            let noise = random_layer(100 + s, 400);
            let prev = layers.last().unwrap().clone();
            let next: Vec<f32> = prev
                .as_slice()
                .iter()
                .zip(noise.as_slice())
                .map(|(a, b)| a + 0.15 * b)
                .collect();
            layers.push(PointCloud::new(400, 16, next).unwrap());
        }
        let stack = LayerStack::new("p", layers).unwrap();
        let ks = [1, 2, 3, 4, 5, 6];
        let sweep = overlap_k_sweep(&stack, &ks).unwrap();
        for (p, &k) in sweep.iter().zip(&ks) {
            assert_eq!(p, &overlap_profile(&stack, k).unwrap());
            assert!(p.chi.iter().all(|c| (0.0..=1.0).contains(c)));
        }
        for w in sweep.windows(2) {
            for (a, b) in w[0].chi.iter().zip(&w[1].chi) {
                assert!((a - b).abs() < 0.15, "{a} -> {b}");
            }
        }
    }

    #[test]
    fn isometry_of_one_layer_keeps_profile() {
        let a = random_layer(7, 200);
        let b = random_layer(8, 200);
        let shifted = PointCloud::new(200, 16, b.as_slice().iter().map(|v| -v).collect()).unwrap();
        let p1 = overlap_profile(&LayerStack::new("p", vec![a.clone(), b]).unwrap(), 3).unwrap();
        let p2 = overlap_profile(&LayerStack::new("p", vec![a, shifted]).unwrap(), 3).unwrap();
        assert_eq!(p1, p2);
    }
}
