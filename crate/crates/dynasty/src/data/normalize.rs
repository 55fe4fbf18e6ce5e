//! Per-feature-dimension z-score normalization. Fitted on the training
//! split only (over X and Y values); adjacency tensors are never touched.

use super::{Dataset, NormStats};
use crate::error::{DynastyError, Result};

const DEGENERATE_STD: f64 = 1e-12;

/// Population mean/std per feature dimension over all nodes, steps and
/// samples of the split (features and targets together). Degenerate
/// dimensions get std 1 and a flag rather than an error.
pub fn fit_normalizer(train: &Dataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(DynastyError::Config("cannot fit a normalizer on an empty split".into()));
    }
    let dims = train.dims;
    let d = dims.feature_dim;
    let mut sum = vec![0.0f64; d];
    let mut count = vec![0.0f64; d];
    let mut visit = |values: &[f64], steps: usize, acc: &mut dyn FnMut(usize, f64)| {
        for (idx, v) in values.iter().enumerate() {
            let f = (idx / steps) % d;
            acc(f, *v);
        }
    };
    for s in &train.samples {
        visit(&s.x_hist, dims.history_len, &mut |f, v| {
            sum[f] += v;
            count[f] += 1.0;
        });
        visit(&s.y, dims.horizon, &mut |f, v| {
            sum[f] += v;
            count[f] += 1.0;
        });
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, c)| s / c).collect();
    let mut sq = vec![0.0f64; d];
    for s in &train.samples {
        visit(&s.x_hist, dims.history_len, &mut |f, v| sq[f] += (v - mean[f]).powi(2));
        visit(&s.y, dims.horizon, &mut |f, v| sq[f] += (v - mean[f]).powi(2));
    }
    let mut degenerate = vec![false; d];
    let std: Vec<f64> = sq
        .iter()
        .zip(&count)
        .enumerate()
        .map(|(f, (s, c))| {
            let sd = (s / c).sqrt();
            if sd <= DEGENERATE_STD {
                degenerate[f] = true;
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormStats { mean, std, degenerate })
}

/// z-score `values` in place. Layout is [N, D, steps] row-major.
pub fn normalize_values(stats: &NormStats, values: &mut [f64], steps: usize) {
    let d = stats.mean.len();
    for (idx, v) in values.iter_mut().enumerate() {
        let f = (idx / steps) % d;
        *v = (*v - stats.mean[f]) / stats.std[f];
    }
}

/// Undo [`normalize_values`].
pub fn invert_values(stats: &NormStats, values: &mut [f64], steps: usize) {
    let d = stats.mean.len();
    for (idx, v) in values.iter_mut().enumerate() {
        let f = (idx / steps) % d;
        *v = *v * stats.std[f] + stats.mean[f];
    }
}

/// Normalized copy of a dataset; the stats travel in its provenance. Emits
/// a warning flag per degenerate feature dimension.
pub fn apply_normalization(dataset: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if stats.mean.len() != dataset.dims.feature_dim {
        return Err(DynastyError::dim(
            "apply_normalization",
            format!(
                "stats cover {} feature dims, dataset has {}",
                stats.mean.len(),
                dataset.dims.feature_dim
            ),
        ));
    }
    let dims = dataset.dims;
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            normalize_values(stats, &mut out.x_hist, dims.history_len);
            normalize_values(stats, &mut out.y, dims.horizon);
            out
        })
        .collect();
    let mut provenance = dataset.provenance.clone();
    provenance.normalization = Some(stats.clone());
    for (f, is_degenerate) in stats.degenerate.iter().enumerate() {
        if *is_degenerate {
            provenance.warnings.push(format!("feature dimension {f} has zero variance"));
        }
    }
    Dataset::new(samples, dims, provenance)
}
