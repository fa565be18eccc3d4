//! Seeded point clouds on manifolds of known dimension, used as ground truth
//! for the intrinsic-dimension estimators.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    /// Uniform on `[0, 1]^latent_dim`.
    Hypercube,
    /// Uniform on the unit sphere `S^latent_dim` (sitting in `latent_dim + 1` coordinates).
    Hypersphere,
    /// Standard normal in `latent_dim` coordinates.
    Gaussian,
}

impl std::str::FromStr for ManifoldKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hypercube" => Ok(Self::Hypercube),
            "hypersphere" => Ok(Self::Hypersphere),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(format!("unknown manifold kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: ManifoldKind,
    pub latent_dim: usize,
    pub ambient_dim: usize,
    pub n_points: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntheticError {
    #[error("latent_dim, ambient_dim and n_points must be positive")]
    Zero,
    #[error("{kind:?} of latent dimension {latent} needs {needed} ambient coordinates, got {ambient}")]
    AmbientTooSmall {
        kind: ManifoldKind,
        latent: usize,
        needed: usize,
        ambient: usize,
    },
}

impl SyntheticSpec {
    /// Coordinates the manifold occupies before embedding.
    fn coord_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Hypersphere => self.latent_dim + 1,
            _ => self.latent_dim,
        }
    }

    fn validate(&self) -> Result<(), SyntheticError> {
        if self.latent_dim == 0 || self.ambient_dim == 0 || self.n_points == 0 {
            return Err(SyntheticError::Zero);
        }
        if self.coord_dim() > self.ambient_dim {
            return Err(SyntheticError::AmbientTooSmall {
                kind: self.kind,
                latent: self.latent_dim,
                needed: self.coord_dim(),
                ambient: self.ambient_dim,
            });
        }
        Ok(())
    }
}

/// `ambient x cols` matrix with orthonormal columns from the QR factor of a
/// Gaussian matrix.
pub fn random_orthonormal(ambient: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(ambient, ambient, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    q.columns(0, cols).into_owned()
}

/// Samples `n_points` from the manifold and embeds them isometrically. When
/// the manifold already fills the ambient space the embedding is the
/// identity; otherwise it is a seeded random orthonormal map.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PointCloud<f64>, SyntheticError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let m = spec.coord_dim();
    let mut latent = vec![0.0f64; spec.n_points * m];
    for row in latent.chunks_exact_mut(m) {
        match spec.kind {
            ManifoldKind::Hypercube => row.iter_mut().for_each(|v| *v = rng.random::<f64>()),
            ManifoldKind::Gaussian => row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
            ManifoldKind::Hypersphere => loop {
                row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    row.iter_mut().for_each(|v| *v /= norm);
                    break;
                }
            },
        }
    }
    if m == spec.ambient_dim {
        return Ok(PointCloud::new(spec.n_points, m, latent).expect("finite samples"));
    }
    let basis = random_orthonormal(spec.ambient_dim, m, &mut rng);
    let mut data = vec![0.0f64; spec.n_points * spec.ambient_dim];
    for (src, dst) in latent.chunks_exact(m).zip(data.chunks_exact_mut(spec.ambient_dim)) {
        for (a, out) in dst.iter_mut().enumerate() {
            *out = (0..m).map(|j| basis[(a, j)] * src[j]).sum();
        }
    }
    Ok(PointCloud::new(spec.n_points, spec.ambient_dim, data).expect("finite samples"))
}
