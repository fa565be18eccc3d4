//! Geometry of layerwise token representations.
//!
//! A prompt's hidden states form one point cloud per layer (`LayerStack`).
//! This crate measures those clouds (intrinsic dimension, neighborhood
//! overlap, cosine similarity, nearest-neighbor angles), shuffles token
//! sequences in blocks, and relates the geometry to next-token statistics
//! (cross-entropy loss, softmax entropy, correlation across a population).

pub mod entropy;
pub mod id;
pub mod io;
pub mod neighbors;
pub mod overlap;
pub mod pipeline;
pub mod shuffle;
pub mod stats;
pub mod synthetic;
pub mod types;

pub use types::{Coord, LayerStack, LogitRecord, PointCloud, ShapeError};
