//! Static-graph aggregation (consensus and union) and the static/shuffled
//! dataset variants used by the ablations.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DynamicGraphSample, TemporalEdgeRecord};
use crate::error::{DynastyError, Result};

/// Mean of binarized adjacencies over every slice of every sequence, kept
/// where the mean exceeds `tau`. Each sequence is [N, N, L] row-major.
pub fn aggregate_static_consensus(
    sequences: &[(&[f64], usize, usize)],
    tau: f64,
) -> Result<Vec<f64>> {
    if sequences.is_empty() {
        return Err(DynastyError::Config("consensus aggregation over no sequences".into()));
    }
    let n = sequences[0].1;
    let mut counts = vec![0.0f64; n * n];
    let mut total_slices = 0usize;
    for (values, seq_n, len) in sequences {
        if *seq_n != n {
            return Err(DynastyError::dim(
                "aggregate_static_consensus",
                format!("sequences disagree on node count: {n} vs {seq_n}"),
            ));
        }
        for i in 0..n {
            for j in 0..n {
                for t in 0..*len {
                    if values[(i * n + j) * len + t] != 0.0 {
                        counts[i * n + j] += 1.0;
                    }
                }
            }
        }
        total_slices += len;
    }
    let m = total_slices as f64;
    Ok(counts.into_iter().map(|c| if c / m > tau { 1.0 } else { 0.0 }).collect())
}

/// Binary OR over time of nonzero entries of the given sequences.
pub fn aggregate_static_union(sequences: &[(&[f64], usize, usize)]) -> Result<Vec<f64>> {
    if sequences.is_empty() {
        return Err(DynastyError::Config("union aggregation over no sequences".into()));
    }
    let n = sequences[0].1;
    let mut out = vec![0.0f64; n * n];
    for (values, seq_n, len) in sequences {
        if *seq_n != n {
            return Err(DynastyError::dim(
                "aggregate_static_union",
                format!("sequences disagree on node count: {n} vs {seq_n}"),
            ));
        }
        for i in 0..n * n {
            for t in 0..*len {
                if values[i * len + t] != 0.0 {
                    out[i] = 1.0;
                }
            }
        }
    }
    Ok(out)
}

/// Union graph straight from rating events: entry (i, j) set where i ever
/// rated j. `index_of` maps raw ids to 0..N-1.
pub fn union_from_records(
    records: &[TemporalEdgeRecord],
    index_of: &std::collections::BTreeMap<u64, usize>,
) -> Vec<f64> {
    let n = index_of.len();
    let mut out = vec![0.0; n * n];
    for r in records {
        if r.source == r.target {
            continue;
        }
        if let (Some(&i), Some(&j)) = (index_of.get(&r.source), index_of.get(&r.target)) {
            out[i * n + j] = 1.0;
        }
    }
    out
}

/// Replace each sample's adjacency history with its own consensus
/// aggregate (threshold `tau`) repeated across all steps.
pub fn make_static_variant(dataset: &Dataset, tau: f64) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(DynastyError::Config("static variant of an empty dataset".into()));
    }
    let dims = dataset.dims;
    let (n, l) = (dims.num_nodes, dims.history_len);
    let samples: Vec<DynamicGraphSample> = dataset
        .samples
        .iter()
        .map(|s| {
            let consensus = aggregate_static_consensus(&[(&s.a_hist, n, l)], tau)
                .expect("single nonempty sequence");
            let mut a_hist = vec![0.0; dims.a_len()];
            for e in 0..n * n {
                for t in 0..l {
                    a_hist[e * l + t] = consensus[e];
                }
            }
            DynamicGraphSample { a_hist, ..s.clone() }
        })
        .collect();
    let mut provenance = dataset.provenance.clone();
    provenance.source = format!("{}+static", provenance.source);
    Dataset::new(samples, dims, provenance)
}

/// Permute the assignment of adjacency histories across samples so node
/// dynamics and graphs no longer correspond; features and targets are
/// untouched. Prefers a derangement; a single-sample dataset falls back to
/// the identity with a warning flag.
pub fn shuffle_graphs(dataset: &Dataset, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(DynastyError::Config("shuffle of an empty dataset".into()));
    }
    let count = dataset.len();
    let mut provenance = dataset.provenance.clone();
    provenance.source = format!("{}+shuffled", provenance.source);

    let assignment: Vec<usize> = if count == 1 {
        provenance.warnings.push("single-sample dataset cannot be deranged".into());
        vec![0]
    } else {
        let mut perm: Vec<usize> = (0..count).collect();
        let mut deranged = false;
        for _ in 0..200 {
            perm.shuffle(rng);
            if perm.iter().enumerate().all(|(i, &p)| i != p) {
                deranged = true;
                break;
            }
        }
        if !deranged {
            // rotation is always fixed-point free for two or more samples
            perm = (0..count).map(|i| (i + 1) % count).collect();
        }
        perm
    };

    let samples: Vec<DynamicGraphSample> = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| DynamicGraphSample {
            a_hist: dataset.samples[assignment[i]].a_hist.clone(),
            ..s.clone()
        })
        .collect();
    Dataset::new(samples, dataset.dims, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_diffusion_dataset, DiffusionConfig};
    use rand::SeedableRng;

    #[test]
    fn unanimous_graphs_survive_any_subunit_threshold() {
        let n = 3;
        let l = 4;
        // same ring graph in every slice
        let mut seq = vec![0.0; n * n * l];
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            for t in 0..l {
                seq[(i * n + j) * l + t] = 1.0;
            }
        }
        let consensus = aggregate_static_consensus(&[(&seq, n, l)], 0.9).unwrap();
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            assert_eq!(consensus[i * n + j], 1.0);
        }
        assert_eq!(consensus.iter().filter(|&&v| v != 0.0).count(), 3);
    }

    #[test]
    fn consensus_majority_arithmetic() {
        let n = 2;
        let l = 3;
        // edge (0,1) in 2 of 3 slices; edge (1,0) in 1 of 3
        let mut seq = vec![0.0; n * n * l];
        seq[(0 * n + 1) * l] = 1.0;
        seq[(0 * n + 1) * l + 1] = 1.0;
        seq[(1 * n + 0) * l + 2] = 1.0;
        let consensus = aggregate_static_consensus(&[(&seq, n, l)], 0.5).unwrap();
        assert_eq!(consensus[1], 1.0); // 2/3 > 0.5 kept
        assert_eq!(consensus[2], 0.0); // 1/3 dropped
    }

    #[test]
    fn full_threshold_keeps_only_universal_edges() {
        let n = 2;
        let l = 2;
        let mut seq = vec![1.0; n * n * l];
        seq[(0 * n + 1) * l + 1] = 0.0;
        let consensus = aggregate_static_consensus(&[(&seq, n, l)], 1.0).unwrap();
        // nothing exceeds 1.0 strictly, even universal edges
        assert!(consensus.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn union_covers_all_event_times() {
        // edges (0,1) at t=1 and (1,2) at t=9 in a 3-node, 10-step sequence
        let n = 3;
        let l = 10;
        let mut seq = vec![0.0; n * n * l];
        seq[(0 * n + 1) * l + 1] = 0.5;
        seq[(1 * n + 2) * l + 9] = -3.0;
        let union = aggregate_static_union(&[(&seq, n, l)]).unwrap();

        // brute scan oracle
        let mut want = vec![0.0; n * n];
        for e in 0..n * n {
            for t in 0..l {
                if seq[e * l + t] != 0.0 {
                    want[e] = 1.0;
                }
            }
        }
        assert_eq!(union, want);
        assert_eq!(union.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn union_of_nothing_is_an_error_and_empty_graph_stays_empty() {
        assert!(aggregate_static_union(&[]).is_err());
        let seq = vec![0.0; 4 * 4 * 3];
        let union = aggregate_static_union(&[(&seq, 4, 3)]).unwrap();
        assert!(union.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_interaction_sets_exactly_one_entry() {
        let records = vec![TemporalEdgeRecord { source: 10, target: 20, rating: 3.0, timestamp: 5 }];
        let index_of: std::collections::BTreeMap<u64, usize> =
            [(10u64, 0usize), (20u64, 1usize)].into_iter().collect();
        let union = union_from_records(&records, &index_of);
        assert_eq!(union.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(union[1], 1.0);
    }

    #[test]
    fn static_variant_repeats_one_graph_per_sample() {
        let ds = generate_diffusion_dataset(&DiffusionConfig {
            num_samples: 5,
            ..DiffusionConfig::default()
        })
        .unwrap();
        let stat = make_static_variant(&ds, 0.5).unwrap();
        let (n, l) = (stat.dims.num_nodes, stat.dims.history_len);
        for s in &stat.samples {
            for e in 0..n * n {
                let first = s.a_hist[e * l];
                for t in 1..l {
                    assert_eq!(s.a_hist[e * l + t], first);
                }
            }
        }
        // features and targets untouched
        for (a, b) in ds.samples.iter().zip(&stat.samples) {
            assert_eq!(a.x_hist, b.x_hist);
            assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn shuffle_preserves_the_multiset_and_usually_moves_everything() {
        let ds = generate_diffusion_dataset(&DiffusionConfig {
            num_samples: 50,
            ..DiffusionConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shuffled = shuffle_graphs(&ds, &mut rng).unwrap();

        let mut original: Vec<&[f64]> = ds.samples.iter().map(|s| s.a_hist.as_slice()).collect();
        let mut moved: Vec<&[f64]> = shuffled.samples.iter().map(|s| s.a_hist.as_slice()).collect();
        original.sort_by(|a, b| a.partial_cmp(b).unwrap());
        moved.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(original, moved);

        let changed = ds
            .samples
            .iter()
            .zip(&shuffled.samples)
            .filter(|(a, b)| a.a_hist != b.a_hist)
            .count();
        assert!(changed >= 45, "only {changed}/50 samples received a different graph");

        // reproducible under the same seed
        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let again = shuffle_graphs(&ds, &mut rng2).unwrap();
        assert_eq!(shuffled.samples, again.samples);
    }

    #[test]
    fn single_sample_shuffle_falls_back_with_a_warning() {
        let ds = generate_diffusion_dataset(&DiffusionConfig {
            num_samples: 1,
            ..DiffusionConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shuffled = shuffle_graphs(&ds, &mut rng).unwrap();
        assert_eq!(shuffled.samples[0].a_hist, ds.samples[0].a_hist);
        assert!(!shuffled.provenance.warnings.is_empty());
    }
}
