//! Exact Euclidean nearest neighbors and the per-cloud quantities derived
//! from them: neighbor-distance ratios, mean pairwise cosine similarity and
//! the apex angle between each token's two nearest neighbors.

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use crate::types::{Coord, PointCloud};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NeighborError {
    #[error("k must be positive")]
    ZeroK,
    #[error("k = {k} needs more than {k} points, cloud has {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("ratio ranks must satisfy 1 <= n1 < n2, got ({n1}, {n2})")]
    RatioOrder { n1: usize, n2: usize },
    #[error("rank n2 = {n2} exceeds graph k = {k}")]
    RatioBeyondK { n2: usize, k: usize },
    #[error("need at least two nonzero rows, found {0}")]
    TooFewNonzero(usize),
    #[error("angles need k >= 2, graph has k = {0}")]
    NeedTwoNeighbors(usize),
    #[error("graph covers {graph} points, cloud has {cloud}")]
    ShapeMismatch { graph: usize, cloud: usize },
}

/// The `k` nearest neighbors of every point, closest first. Ties in distance
/// are broken by ascending token index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    k: usize,
    n_points: usize,
    ambient_dim: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborGraph {
    /// Builds a graph from explicit neighbor lists. Rows must be sorted by
    /// distance, exclude the point itself and reference valid indices.
    pub fn from_parts(
        k: usize,
        ambient_dim: usize,
        indices: Vec<Vec<usize>>,
        distances: Vec<Vec<f64>>,
    ) -> Result<Self, NeighborError> {
        if k == 0 {
            return Err(NeighborError::ZeroK);
        }
        let n = indices.len();
        if k >= n {
            return Err(NeighborError::KTooLarge { k, n });
        }
        let mut flat_i = Vec::with_capacity(n * k);
        let mut flat_d = Vec::with_capacity(n * k);
        for (i, (idx, dist)) in indices.iter().zip(&distances).enumerate() {
            assert!(idx.len() == k && dist.len() == k, "row {i} has wrong width");
            assert!(idx.iter().all(|&j| j < n && j != i), "row {i} has invalid neighbor");
            assert!(dist.windows(2).all(|w| w[0] <= w[1]), "row {i} is not sorted");
            flat_i.extend_from_slice(idx);
            flat_d.extend_from_slice(dist);
        }
        Ok(Self {
            k,
            n_points: n,
            ambient_dim,
            indices: flat_i,
            distances: flat_d,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    /// Tokens whose first neighbor sits at distance zero.
    pub fn duplicate_count(&self) -> usize {
        (0..self.n_points).filter(|&i| self.distances(i)[0] == 0.0).count()
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Exact k-nearest neighbors by brute force over all pairs.
pub fn knn<T: Coord>(cloud: &PointCloud<T>, k: usize) -> Result<NeighborGraph, NeighborError> {
    let n = cloud.n_points();
    if k == 0 {
        return Err(NeighborError::ZeroK);
    }
    if k >= n {
        return Err(NeighborError::KTooLarge { k, n });
    }
    let points = cloud.to_f64();
    let dim = points.dim();
    let mut indices = vec![0usize; n * k];
    let mut distances = vec![0.0f64; n * k];
    indices
        .par_chunks_mut(k)
        .zip(distances.par_chunks_mut(k))
        .enumerate()
        .for_each_init(
            || Vec::with_capacity(n),
            |cand, (i, (idx_out, dist_out))| {
                cand.clear();
                let q = points.row(i);
                cand.extend(
                    points
                        .rows()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(j, p)| (squared_distance(q, p), j)),
                );
                if k < cand.len() {
                    cand.select_nth_unstable_by(k - 1, by_distance_then_index);
                }
                let top = &mut cand[..k];
                top.sort_unstable_by(by_distance_then_index);
                for (slot, &(d2, j)) in top.iter().enumerate() {
                    idx_out[slot] = j;
                    dist_out[slot] = d2.sqrt();
                }
            },
        );
    Ok(NeighborGraph {
        k,
        n_points: n,
        ambient_dim: dim,
        indices,
        distances,
    })
}

/// Ratios `r_{i,n2} / r_{i,n1}` of neighbor distances.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSet {
    pub n1: usize,
    pub n2: usize,
    /// Dimension of the space the ratios were measured in; bounds the ID search.
    pub ambient_dim: usize,
    /// One ratio per non-degenerate token, in token order. Always `>= 1`.
    pub mu: Vec<f64>,
    /// Token index of each entry in `mu`.
    pub tokens: Vec<usize>,
    /// Tokens dropped because `r_{i,n1} = 0`.
    pub degenerate: usize,
}

impl RatioSet {
    pub fn new(n1: usize, n2: usize, ambient_dim: usize, mu: Vec<f64>) -> Result<Self, NeighborError> {
        if n1 == 0 || n1 >= n2 {
            return Err(NeighborError::RatioOrder { n1, n2 });
        }
        let tokens = (0..mu.len()).collect();
        Ok(Self {
            n1,
            n2,
            ambient_dim,
            mu,
            tokens,
            degenerate: 0,
        })
    }

    /// Entries with `mu == 1` (equal neighbor distances), which lie on the
    /// boundary of the ratio distribution's support.
    pub fn boundary_count(&self) -> usize {
        self.mu.iter().filter(|&&m| m <= 1.0).count()
    }
}

pub fn mu_ratios(graph: &NeighborGraph, n1: usize, n2: usize) -> Result<RatioSet, NeighborError> {
    if n1 == 0 || n1 >= n2 {
        return Err(NeighborError::RatioOrder { n1, n2 });
    }
    if n2 > graph.k() {
        return Err(NeighborError::RatioBeyondK { n2, k: graph.k() });
    }
    let mut mu = Vec::with_capacity(graph.n_points());
    let mut tokens = Vec::with_capacity(graph.n_points());
    let mut degenerate = 0;
    for i in 0..graph.n_points() {
        let d = graph.distances(i);
        let r1 = d[n1 - 1];
        if r1 > 0.0 {
            mu.push(d[n2 - 1] / r1);
            tokens.push(i);
        } else {
            degenerate += 1;
        }
    }
    Ok(RatioSet {
        n1,
        n2,
        ambient_dim: graph.ambient_dim(),
        mu,
        tokens,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSummary {
    /// Mean of `cos(x_i, x_j)` over unordered pairs of distinct nonzero rows.
    pub mean: f64,
    pub n_pairs: usize,
    pub zero_rows: usize,
}

/// Mean cosine similarity between token vectors (directions from the origin).
pub fn mean_cosine_similarity<T: Coord>(cloud: &PointCloud<T>) -> Result<CosineSummary, NeighborError> {
    let units: Vec<Vec<f64>> = cloud
        .rows()
        .filter_map(|r| {
            let v: Vec<f64> = r.iter().map(|x| x.to_f64()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (norm > 0.0).then(|| v.into_iter().map(|x| x / norm).collect())
        })
        .collect();
    let m = units.len();
    if m < 2 {
        return Err(NeighborError::TooFewNonzero(m));
    }
    let row_sums: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            units[i + 1..]
                .iter()
                .map(|u| dot(&units[i], u).clamp(-1.0, 1.0))
                .sum::<f64>()
        })
        .collect();
    let n_pairs = m * (m - 1) / 2;
    let mean = row_sums.iter().sum::<f64>() / n_pairs as f64;
    Ok(CosineSummary {
        mean: mean.clamp(-1.0, 1.0),
        n_pairs,
        zero_rows: cloud.n_points() - m,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleStats {
    /// Cosine of the angle at `x_i` between its first and second neighbors.
    pub cosines: Vec<f64>,
    /// Token index of each entry in `cosines`.
    pub tokens: Vec<usize>,
    pub mean_angle_deg: f64,
    /// Tokens skipped because a displacement vector was zero.
    pub excluded: usize,
}

/// Apex angle between `x_{i,1} - x_i` and `x_{i,2} - x_i` for every token.
pub fn nn_angles<T: Coord>(cloud: &PointCloud<T>, graph: &NeighborGraph) -> Result<AngleStats, NeighborError> {
    if graph.k() < 2 {
        return Err(NeighborError::NeedTwoNeighbors(graph.k()));
    }
    if graph.n_points() != cloud.n_points() {
        return Err(NeighborError::ShapeMismatch {
            graph: graph.n_points(),
            cloud: cloud.n_points(),
        });
    }
    let mut cosines = Vec::with_capacity(cloud.n_points());
    let mut tokens = Vec::with_capacity(cloud.n_points());
    let mut excluded = 0;
    for i in 0..cloud.n_points() {
        let nb = graph.neighbors(i);
        let xi = cloud.row(i);
        let (a, b) = (cloud.row(nb[0]), cloud.row(nb[1]));
        let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
        for ((o, p), q) in xi.iter().zip(a).zip(b) {
            let u = p.to_f64() - o.to_f64();
            let v = q.to_f64() - o.to_f64();
            ab += u * v;
            aa += u * u;
            bb += v * v;
        }
        if aa == 0.0 || bb == 0.0 {
            excluded += 1;
            continue;
        }
        cosines.push((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0));
        tokens.push(i);
    }
    let mean_angle_deg = if cosines.is_empty() {
        f64::NAN
    } else {
        cosines.iter().map(|c| c.acos().to_degrees()).sum::<f64>() / cosines.len() as f64
    };
    Ok(AngleStats {
        cosines,
        tokens,
        mean_angle_deg,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic, random_orthonormal, ManifoldKind, SyntheticSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn line(xs: &[f64]) -> PointCloud<f64> {
        PointCloud::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    fn cloud2(pts: &[(f64, f64)]) -> PointCloud<f64> {
        PointCloud::new(pts.len(), 2, pts.iter().flat_map(|&(a, b)| [a, b]).collect()).unwrap()
    }

    fn gaussian(n: usize, dim: usize, seed: u64) -> PointCloud<f64> {
        generate_synthetic(&SyntheticSpec {
            kind: ManifoldKind::Gaussian,
            latent_dim: dim,
            ambient_dim: dim,
            n_points: n,
            seed,
        })
        .unwrap()
    }

    /// Full distance matrix plus a complete sort per row.
    fn brute_force(cloud: &PointCloud<f64>, k: usize) -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
        let n = cloud.n_points();
        let mut idx = Vec::new();
        let mut dist = Vec::new();
        for i in 0..n {
            let mut row: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = cloud
                        .row(i)
                        .iter()
                        .zip(cloud.row(j))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (d2.sqrt(), j)
                })
                .collect();
            row.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            idx.push(row[..k].iter().map(|p| p.1).collect());
            dist.push(row[..k].iter().map(|p| p.0).collect());
        }
        (idx, dist)
    }

    #[test]
    fn knn_on_three_points_of_a_line() {
        let g = knn(&line(&[0.0, 1.0, 3.0]), 2).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1, 0]);
        assert_eq!(g.distances(0), &[1.0, 3.0]);
        assert_eq!(g.distances(1), &[1.0, 2.0]);
        assert_eq!(g.distances(2), &[2.0, 3.0]);
    }

    #[test]
    fn knn_rejects_large_k() {
        assert_eq!(
            knn(&line(&[0.0, 1.0, 3.0]), 3),
            Err(NeighborError::KTooLarge { k: 3, n: 3 })
        );
        assert_eq!(knn(&line(&[0.0, 1.0]), 0), Err(NeighborError::ZeroK));
    }

    #[test]
    fn ties_broken_by_index() {
        let g = knn(&line(&[0.0, -1.0, 1.0, 5.0]), 2).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
    }

    #[test]
    fn duplicate_points_give_zero_distance_and_degenerate_ratio() {
        let g = knn(&line(&[0.0, 0.0, 1.0, 3.0]), 2).unwrap();
        assert_eq!(g.distances(0)[0], 0.0);
        assert_eq!(g.duplicate_count(), 2);
        let r = mu_ratios(&g, 1, 2).unwrap();
        assert_eq!(r.degenerate, 2);
        assert_eq!(r.tokens, vec![2, 3]);
    }

    #[test]
    fn scaling_multiplies_distances() {
        let c = gaussian(40, 3, 1);
        let scaled = PointCloud::new(40, 3, c.as_slice().iter().map(|v| v * 10.0).collect()).unwrap();
        let (g, h) = (knn(&c, 4).unwrap(), knn(&scaled, 4).unwrap());
        for i in 0..40 {
            assert_eq!(g.neighbors(i), h.neighbors(i));
            for (a, b) in g.distances(i).iter().zip(h.distances(i)) {
                assert!((a * 10.0 - b).abs() <= 1e-12 * b);
            }
        }
    }

    #[test]
    fn matches_full_distance_matrix() {
        for (n, dim, seed) in [(64, 3, 2), (512, 8, 3), (200, 33, 4)] {
            let c = gaussian(n, dim, seed);
            let k = 7;
            let g = knn(&c, k).unwrap();
            let (idx, dist) = brute_force(&c, k);
            for i in 0..n {
                assert_eq!(g.neighbors(i), idx[i].as_slice(), "row {i}");
                for (a, b) in g.distances(i).iter().zip(&dist[i]) {
                    assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
                }
            }
        }
    }

    #[test]
    fn ratios_of_line_example() {
        let g = knn(&line(&[0.0, 1.0, 3.0]), 2).unwrap();
        let r = mu_ratios(&g, 1, 2).unwrap();
        assert_eq!(r.mu, vec![3.0, 2.0, 1.5]);
        assert_eq!(r.degenerate, 0);
        assert_eq!(mu_ratios(&g, 1, 3), Err(NeighborError::RatioBeyondK { n2: 3, k: 2 }));
        assert_eq!(mu_ratios(&g, 2, 2), Err(NeighborError::RatioOrder { n1: 2, n2: 2 }));
    }

    #[test]
    fn simplex_ratios_sit_on_boundary() {
        // Regular simplex: the standard basis of R^4.
        let mut data = vec![0.0; 16];
        for i in 0..4 {
            data[i * 4 + i] = 1.0;
        }
        let c = PointCloud::new(4, 4, data).unwrap();
        let r = mu_ratios(&knn(&c, 2).unwrap(), 1, 2).unwrap();
        assert_eq!(r.mu, vec![1.0; 4]);
        assert_eq!(r.boundary_count(), 4);
    }

    #[test]
    fn cosine_examples() {
        let s = mean_cosine_similarity(&cloud2(&[(1.0, 0.0), (0.0, 1.0)])).unwrap();
        assert_eq!(s.mean, 0.0);
        let s = mean_cosine_similarity(&cloud2(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-15);
        let h = 0.5f64.sqrt();
        let s = mean_cosine_similarity(&cloud2(&[(1.0, 0.0), (0.0, 1.0), (h, h)])).unwrap();
        assert!((s.mean - 0.471_404_520_791_031_6).abs() < 1e-12);
        assert_eq!(s.n_pairs, 3);
    }

    #[test]
    fn cosine_zero_rows_are_tallied() {
        let s = mean_cosine_similarity(&cloud2(&[(1.0, 0.0), (0.0, 0.0), (1.0, 1.0)])).unwrap();
        assert_eq!(s.zero_rows, 1);
        assert!((s.mean - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            mean_cosine_similarity(&cloud2(&[(1.0, 0.0), (0.0, 0.0)])),
            Err(NeighborError::TooFewNonzero(1))
        );
    }

    #[test]
    fn cosine_agrees_with_sum_of_units_identity() {
        // sum_{i<j} u_i.u_j = (|sum u|^2 - n) / 2 for unit vectors.
        let c = gaussian(300, 5, 9);
        let mut total = [0.0; 5];
        for r in c.rows() {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (t, v) in total.iter_mut().zip(r) {
                *t += v / n;
            }
        }
        let pairs = 300.0 * 299.0 / 2.0;
        let expected = (total.iter().map(|v| v * v).sum::<f64>() - 300.0) / 2.0 / pairs;
        let got = mean_cosine_similarity(&c).unwrap().mean;
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn cosine_is_not_translation_invariant() {
        let c = cloud2(&[(1.0, 0.0), (0.0, 1.0)]);
        let shifted = cloud2(&[(11.0, 10.0), (10.0, 11.0)]);
        let a = mean_cosine_similarity(&c).unwrap().mean;
        let b = mean_cosine_similarity(&shifted).unwrap().mean;
        assert!((a - b).abs() > 0.5);
    }

    #[test]
    fn angle_examples() {
        let right = cloud2(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.1)]);
        let g = knn(&right, 2).unwrap();
        let a = nn_angles(&right, &g).unwrap();
        assert_eq!(a.tokens[0], 0);
        assert!(a.cosines[0].abs() < 1e-15);

        let h = 3f64.sqrt() / 2.0;
        let tri = cloud2(&[(0.0, 0.0), (1.0, 0.0), (0.5, h)]);
        let a = nn_angles(&tri, &knn(&tri, 2).unwrap()).unwrap();
        assert!((a.mean_angle_deg - 60.0).abs() < 1e-9);

        let col = cloud2(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let a = nn_angles(&col, &knn(&col, 2).unwrap()).unwrap();
        assert_eq!(a.cosines[0], 1.0);
        assert_eq!(a.cosines[0].acos().to_degrees(), 0.0);
    }

    #[test]
    fn angles_need_two_neighbors_and_skip_duplicates() {
        let c = cloud2(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        let g1 = knn(&c, 1).unwrap();
        assert_eq!(nn_angles(&c, &g1), Err(NeighborError::NeedTwoNeighbors(1)));
        let dup = cloud2(&[(0.0, 0.0), (0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]);
        let a = nn_angles(&dup, &knn(&dup, 2).unwrap()).unwrap();
        assert_eq!(a.excluded, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn knn_invariant_under_isometry(seed in 0u64..1000, shift in -50.0f64..50.0) {
            let c = gaussian(60, 4, seed);
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0xabc);
            let q = random_orthonormal(4, 4, &mut rng);
            let moved = c.map_rows(4, |r, out| {
                for (a, o) in out.iter_mut().enumerate() {
                    *o = (0..4).map(|j| q[(a, j)] * r[j]).sum::<f64>() + shift;
                }
            }).unwrap();
            let (g, h) = (knn(&c, 5).unwrap(), knn(&moved, 5).unwrap());
            for i in 0..60 {
                prop_assert_eq!(g.neighbors(i), h.neighbors(i));
                for (a, b) in g.distances(i).iter().zip(h.distances(i)) {
                    prop_assert!((a - b).abs() <= 1e-9 * a);
                }
            }
            let ca = nn_angles(&c, &g).unwrap();
            let cb = nn_angles(&moved, &h).unwrap();
            for (a, b) in ca.cosines.iter().zip(&cb.cosines) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn ratios_and_cosine_scale_invariant(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let c = gaussian(50, 3, seed);
            let s = PointCloud::new(50, 3, c.as_slice().iter().map(|v| v * scale).collect()).unwrap();
            let (r, t) = (
                mu_ratios(&knn(&c, 4).unwrap(), 2, 4).unwrap(),
                mu_ratios(&knn(&s, 4).unwrap(), 2, 4).unwrap(),
            );
            for (a, b) in r.mu.iter().zip(&t.mu) {
                prop_assert!((a - b).abs() < 1e-12 * a);
            }
            let (ca, cb) = (
                mean_cosine_similarity(&c).unwrap().mean,
                mean_cosine_similarity(&s).unwrap().mean,
            );
            prop_assert!((ca - cb).abs() < 1e-12);
        }
    }
}
