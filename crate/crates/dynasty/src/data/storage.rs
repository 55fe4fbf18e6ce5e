//! On-disk dataset, series-archive, and adjacency formats, all built on
//! the shared manifest + blob layout. Round trips are bit-exact.

use std::path::Path;

use serde_json::{json, Value};

use super::{Dataset, Dims, DynamicGraphSample, Provenance, SubjectSeries};
use crate::error::{DynastyError, Result};
use crate::io;

pub const DATASET_FORMAT: &str = "dynasty-dataset-v1";
pub const SERIES_FORMAT: &str = "dynasty-series-v1";
pub const ADJACENCY_FORMAT: &str = "dynasty-adjacency-v1";

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let dims = dataset.dims;
    let mut tensors: Vec<(String, Vec<usize>, &[f64])> = Vec::with_capacity(dataset.len() * 3);
    for s in &dataset.samples {
        tensors.push((
            format!("{}/x_hist", s.sample_id),
            vec![dims.num_nodes, dims.feature_dim, dims.history_len],
            &s.x_hist,
        ));
        tensors.push((
            format!("{}/a_hist", s.sample_id),
            vec![dims.num_nodes, dims.num_nodes, dims.history_len],
            &s.a_hist,
        ));
        tensors.push((
            format!("{}/y", s.sample_id),
            vec![dims.num_nodes, dims.feature_dim, dims.horizon],
            &s.y,
        ));
    }
    let mut extra = serde_json::Map::new();
    extra.insert("dims".into(), serde_json::to_value(dims)?);
    extra.insert("provenance".into(), serde_json::to_value(&dataset.provenance)?);
    extra.insert(
        "sample_ids".into(),
        json!(dataset.samples.iter().map(|s| s.sample_id.clone()).collect::<Vec<_>>()),
    );
    io::write_archive(dir, DATASET_FORMAT, extra, &tensors)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let archive = io::read_archive(dir)?;
    if archive.format != DATASET_FORMAT {
        return Err(DynastyError::Format(format!(
            "expected {DATASET_FORMAT}, found `{}`",
            archive.format
        )));
    }
    let field = |name: &str| -> Result<&Value> {
        archive
            .extra
            .get(name)
            .ok_or_else(|| DynastyError::Format(format!("dataset manifest lacks `{name}`")))
    };
    let dims: Dims = serde_json::from_value(field("dims")?.clone())?;
    let provenance: Provenance = serde_json::from_value(field("provenance")?.clone())?;
    let sample_ids: Vec<String> = serde_json::from_value(field("sample_ids")?.clone())?;

    let samples = sample_ids
        .iter()
        .map(|id| -> Result<DynamicGraphSample> {
            Ok(DynamicGraphSample {
                sample_id: id.clone(),
                x_hist: archive.tensor(&format!("{id}/x_hist"))?.values.clone(),
                a_hist: archive.tensor(&format!("{id}/a_hist"))?.values.clone(),
                y: archive.tensor(&format!("{id}/y"))?.values.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, dims, provenance)
}

/// Save per-subject raw series, one [N, T] tensor per subject.
pub fn save_series(subjects: &[SubjectSeries], dir: &Path) -> Result<()> {
    let tensors: Vec<(String, Vec<usize>, &[f64])> = subjects
        .iter()
        .map(|s| (s.id.clone(), vec![s.num_nodes, s.len()], s.values.as_slice()))
        .collect();
    io::write_archive(dir, SERIES_FORMAT, serde_json::Map::new(), &tensors)
}

pub fn load_series(dir: &Path) -> Result<Vec<SubjectSeries>> {
    let archive = io::read_archive(dir)?;
    if archive.format != SERIES_FORMAT {
        return Err(DynastyError::Format(format!(
            "expected {SERIES_FORMAT}, found `{}`",
            archive.format
        )));
    }
    archive
        .tensors
        .into_iter()
        .map(|t| {
            if t.shape.len() != 2 {
                return Err(DynastyError::Format(format!(
                    "series `{}` must be [N, T], got {:?}",
                    t.name, t.shape
                )));
            }
            Ok(SubjectSeries { id: t.name, num_nodes: t.shape[0], values: t.values })
        })
        .collect()
}

/// Persist a single static adjacency matrix.
pub fn write_adjacency(a: &[f64], n: usize, dir: &Path, note: &str) -> Result<()> {
    let mut extra = serde_json::Map::new();
    extra.insert("note".into(), json!(note));
    io::write_archive(dir, ADJACENCY_FORMAT, extra, &[("a_static".into(), vec![n, n], a)])
}

pub fn read_adjacency(dir: &Path) -> Result<(Vec<f64>, usize)> {
    let archive = io::read_archive(dir)?;
    if archive.format != ADJACENCY_FORMAT {
        return Err(DynastyError::Format(format!(
            "expected {ADJACENCY_FORMAT}, found `{}`",
            archive.format
        )));
    }
    let t = archive.tensor("a_static")?;
    Ok((t.values.clone(), t.shape[0]))
}
