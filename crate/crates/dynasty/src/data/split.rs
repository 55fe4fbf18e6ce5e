//! Train/validation/test splitting.
//!
//! Overlapping-window streams split chronologically (contiguous in sample
//! order) so no window leaks across the boundary; multi-subject datasets
//! split pseudo-randomly but deterministically by sample id.

use super::{Dataset, StreamKind};
use crate::error::{DynastyError, Result};

/// Stable FNV-1a hash of a sample id; defines the deterministic "random"
/// order for by-id splits.
fn fnv1a(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn split_dataset(dataset: &Dataset, fractions: [f64; 3]) -> Result<(Dataset, Dataset, Dataset)> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(DynastyError::Config(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    let count = dataset.len();
    let n_train = (fractions[0] * count as f64).floor() as usize;
    let n_val = (fractions[1] * count as f64).floor() as usize;
    let n_test = count - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(DynastyError::Config(format!(
            "split sizes ({n_train}, {n_val}, {n_test}) of {count} samples leave a split empty"
        )));
    }

    let (order, policy): (Vec<usize>, &str) = match dataset.provenance.stream {
        StreamKind::SingleStream => ((0..count).collect(), "chronological"),
        StreamKind::MultiSubject => {
            let mut idx: Vec<usize> = (0..count).collect();
            idx.sort_by_key(|&i| (fnv1a(&dataset.samples[i].sample_id), i));
            (idx, "by-sample-id")
        }
    };

    let build = |slots: &[usize], name: &str| -> Result<Dataset> {
        let samples = slots.iter().map(|&i| dataset.samples[i].clone()).collect();
        let mut provenance = dataset.provenance.clone();
        provenance.split_policy = Some(format!("{policy}:{name}"));
        Dataset::new(samples, dataset.dims, provenance)
    };
    let train = build(&order[..n_train], "train")?;
    let val = build(&order[n_train..n_train + n_val], "val")?;
    let test = build(&order[n_train + n_val..], "test")?;
    Ok((train, val, test))
}
