//! Dataset construction: the synthetic diffusion generator, temporal
//! edge-list ingestion, sliding-window correlation graphs, static
//! aggregation, normalization, splitting, and on-disk storage.

mod aggregate;
mod correlation;
mod diffusion;
mod edges;
mod normalize;
mod split;
mod storage;

pub use aggregate::{
    aggregate_static_consensus, aggregate_static_union, make_static_variant, shuffle_graphs,
    union_from_records,
};
pub use correlation::{correlation_matrix, pearson, window_correlation_graphs, SubjectSeries};
pub use diffusion::{diffusion_step, generate_diffusion_dataset, DiffusionConfig};
pub use edges::{ingest_edge_list, read_edge_csv, TemporalEdgeRecord};
pub use normalize::{apply_normalization, fit_normalizer, invert_values, normalize_values};
pub use split::split_dataset;
pub use storage::{load_dataset, load_series, read_adjacency, save_dataset, save_series, write_adjacency};

use serde::{Deserialize, Serialize};

use crate::error::{DynastyError, Result};
use crate::tensor::Tensor;

/// Shared shape of every sample in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub history_len: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn x_len(&self) -> usize {
        self.num_nodes * self.feature_dim * self.history_len
    }
    pub fn a_len(&self) -> usize {
        self.num_nodes * self.num_nodes * self.history_len
    }
    pub fn y_len(&self) -> usize {
        self.num_nodes * self.feature_dim * self.horizon
    }
}

/// One training example: feature history [N,D,L], adjacency history
/// [N,N,L], and the target trajectory [N,D,H], all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraphSample {
    pub sample_id: String,
    pub x_hist: Vec<f64>,
    pub a_hist: Vec<f64>,
    pub y: Vec<f64>,
}

impl DynamicGraphSample {
    pub fn x_tensor(&self, dims: &Dims) -> Tensor {
        Tensor::from_vec(
            &[dims.num_nodes, dims.feature_dim, dims.history_len],
            self.x_hist.clone(),
        )
        .expect("validated on construction")
    }

    pub fn a_tensor(&self, dims: &Dims) -> Tensor {
        Tensor::from_vec(&[dims.num_nodes, dims.num_nodes, dims.history_len], self.a_hist.clone())
            .expect("validated on construction")
    }

    pub fn y_tensor(&self, dims: &Dims) -> Tensor {
        Tensor::from_vec(&[dims.num_nodes, dims.feature_dim, dims.horizon], self.y.clone())
            .expect("validated on construction")
    }
}

/// Whether samples are overlapping windows of one evolving system (split
/// chronologically to avoid leakage) or independent subjects (split by id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    SingleStream,
    MultiSubject,
}

/// Per-feature-dimension z-score statistics fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose variance was (near) zero; their std is forced to 1.
    pub degenerate: Vec<bool>,
}

/// How a dataset came to be: generator/ingestor name, its parameters, the
/// seed, and any processing applied since.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub seed: u64,
    pub stream: StreamKind,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub split_policy: Option<String>,
    /// Present once the dataset has been normalized, carrying the stats.
    #[serde(default)]
    pub normalization: Option<NormStats>,
}

impl Provenance {
    pub fn new(source: impl Into<String>, stream: StreamKind) -> Self {
        Provenance {
            source: source.into(),
            params: serde_json::Value::Null,
            seed: 0,
            stream,
            warnings: Vec::new(),
            split_policy: None,
            normalization: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DynamicGraphSample>,
    pub dims: Dims,
    pub provenance: Provenance,
}

impl Dataset {
    /// Build a dataset, asserting every sample invariant: consistent
    /// lengths against `dims` and no non-finite values anywhere.
    pub fn new(samples: Vec<DynamicGraphSample>, dims: Dims, provenance: Provenance) -> Result<Self> {
        for s in &samples {
            if s.x_hist.len() != dims.x_len()
                || s.a_hist.len() != dims.a_len()
                || s.y.len() != dims.y_len()
            {
                return Err(DynastyError::dim(
                    "dataset",
                    format!(
                        "sample `{}` tensor lengths ({}, {}, {}) do not match dims {:?}",
                        s.sample_id,
                        s.x_hist.len(),
                        s.a_hist.len(),
                        s.y.len(),
                        dims
                    ),
                ));
            }
            let finite = s.x_hist.iter().chain(&s.a_hist).chain(&s.y).all(|v| v.is_finite());
            if !finite {
                return Err(DynastyError::NonFinite { op: format!("sample `{}`", s.sample_id) });
            }
        }
        Ok(Dataset { samples, dims, provenance })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.provenance.normalization.as_ref()
    }
}

/// Standard normal draw via the Box-Muller transform.
pub(crate) fn standard_normal(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
