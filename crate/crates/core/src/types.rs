//! In-memory data model shared by every module.

use thiserror::Error;

/// Scalar type a point cloud may be stored in. All geometry is computed in
/// `f64` regardless of storage precision.
pub trait Coord: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    fn to_f64(self) -> f64;
}

impl Coord for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Coord for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("data length {len} does not match {rows} x {cols}")]
    Length { len: usize, rows: usize, cols: usize },
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("layer stack has no layers")]
    NoLayers,
    #[error("layer {layer} has shape {got:?}, expected {expected:?}")]
    LayerShape {
        layer: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("log-likelihood at token {token} is positive ({value})")]
    PositiveLogLik { token: usize, value: f64 },
}

/// Rows of `dim`-length vectors, one per token, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T = f32> {
    n_points: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Coord> PointCloud<T> {
    /// Builds a cloud from row-major data. Every entry must be finite.
    pub fn new(n_points: usize, dim: usize, data: Vec<T>) -> Result<Self, ShapeError> {
        if dim == 0 {
            return Err(ShapeError::ZeroDim);
        }
        if data.len() != n_points * dim {
            return Err(ShapeError::Length {
                len: data.len(),
                rows: n_points,
                cols: dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.to_f64().is_finite()) {
            return Err(ShapeError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { n_points, dim, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, ShapeError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(ShapeError::Length {
                    len: r.len(),
                    rows: i,
                    cols: dim,
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Copy promoted to `f64`.
    pub fn to_f64(&self) -> PointCloud<f64> {
        PointCloud {
            n_points: self.n_points,
            dim: self.dim,
            data: self.data.iter().map(|v| v.to_f64()).collect(),
        }
    }

    /// Applies `f` to every row, producing a cloud of possibly different width.
    pub fn map_rows<F>(&self, out_dim: usize, mut f: F) -> Result<PointCloud<f64>, ShapeError>
    where
        F: FnMut(&[T], &mut [f64]),
    {
        let mut data = vec![0.0; self.n_points * out_dim];
        for (src, dst) in self.rows().zip(data.chunks_exact_mut(out_dim.max(1))) {
            f(src, dst);
        }
        PointCloud::new(self.n_points, out_dim, data)
    }
}

impl PointCloud<f64> {
    /// Narrows to `f32` storage, rounding to nearest.
    pub fn to_f32(&self) -> PointCloud<f32> {
        PointCloud {
            n_points: self.n_points,
            dim: self.dim,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Ordered per-layer point clouds for one prompt. Layer 0 is the embedding
/// layer; hidden layers follow in depth order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    prompt_id: String,
    layers: Vec<PointCloud<f32>>,
}

impl LayerStack {
    pub fn new(prompt_id: impl Into<String>, layers: Vec<PointCloud<f32>>) -> Result<Self, ShapeError> {
        let first = layers.first().ok_or(ShapeError::NoLayers)?;
        let expected = (first.n_points(), first.dim());
        for (layer, cloud) in layers.iter().enumerate() {
            let got = (cloud.n_points(), cloud.dim());
            if got != expected {
                return Err(ShapeError::LayerShape { layer, got, expected });
            }
        }
        Ok(Self {
            prompt_id: prompt_id.into(),
            layers,
        })
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn layers(&self) -> &[PointCloud<f32>] {
        &self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.layers[0].n_points()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dim()
    }
}

/// Final-layer logits and the log-likelihood the model assigned to each
/// true next token (natural log).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    n_tokens: usize,
    vocab_size: usize,
    logits: Vec<f32>,
    true_next_loglik: Vec<f32>,
}

impl LogitRecord {
    /// Logits may contain `-inf` (masked entries); NaN and `+inf` are rejected.
    pub fn new(
        n_tokens: usize,
        vocab_size: usize,
        logits: Vec<f32>,
        true_next_loglik: Vec<f32>,
    ) -> Result<Self, ShapeError> {
        if vocab_size == 0 {
            return Err(ShapeError::ZeroDim);
        }
        if logits.len() != n_tokens * vocab_size {
            return Err(ShapeError::Length {
                len: logits.len(),
                rows: n_tokens,
                cols: vocab_size,
            });
        }
        if true_next_loglik.len() != n_tokens {
            return Err(ShapeError::Length {
                len: true_next_loglik.len(),
                rows: n_tokens,
                cols: 1,
            });
        }
        if let Some(pos) = logits.iter().position(|v| v.is_nan() || *v == f32::INFINITY) {
            return Err(ShapeError::NonFinite {
                row: pos / vocab_size,
                col: pos % vocab_size,
            });
        }
        for (token, &v) in true_next_loglik.iter().enumerate() {
            if !v.is_finite() {
                return Err(ShapeError::NonFinite { row: token, col: 0 });
            }
            if v > 0.0 {
                return Err(ShapeError::PositiveLogLik { token, value: v as f64 });
            }
        }
        Ok(Self {
            n_tokens,
            vocab_size,
            logits,
            true_next_loglik,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn logits_row(&self, i: usize) -> &[f32] {
        &self.logits[i * self.vocab_size..(i + 1) * self.vocab_size]
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn true_next_loglik(&self) -> &[f32] {
        &self.true_next_loglik
    }

    /// The logit rows viewed as a point cloud. Fails if any logit is masked.
    pub fn logit_cloud(&self) -> Result<PointCloud<f32>, ShapeError> {
        PointCloud::new(self.n_tokens, self.vocab_size, self.logits.clone())
    }
}
