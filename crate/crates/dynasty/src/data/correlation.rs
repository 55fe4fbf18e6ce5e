//! Sliding-window Pearson correlation graphs over per-subject node series.

use serde_json::json;

use super::{Dataset, Dims, DynamicGraphSample, Provenance, StreamKind};
use crate::error::{DynastyError, Result};

/// One subject's raw series: `values` is [num_nodes, len] row-major.
#[derive(Debug, Clone)]
pub struct SubjectSeries {
    pub id: String,
    pub num_nodes: usize,
    pub values: Vec<f64>,
}

impl SubjectSeries {
    pub fn len(&self) -> usize {
        if self.num_nodes == 0 {
            0
        } else {
            self.values.len() / self.num_nodes
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn at(&self, node: usize, t: usize) -> f64 {
        self.values[node * self.len() + t]
    }
}

/// Pearson correlation of two equal-length slices; zero-variance inputs
/// correlate 0 with everything.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Pre-threshold correlation matrix of the window starting at `start`.
pub fn correlation_matrix(subject: &SubjectSeries, start: usize, window: usize) -> Vec<f64> {
    let n = subject.num_nodes;
    let mut m = vec![0.0; n * n];
    let series: Vec<Vec<f64>> = (0..n)
        .map(|i| (start..start + window).map(|t| subject.at(i, t)).collect())
        .collect();
    for i in 0..n {
        for j in i..n {
            let c = pearson(&series[i], &series[j]);
            m[i * n + j] = c;
            m[j * n + i] = c;
        }
    }
    m
}

/// Slide a window of size `window` with stride `stride` over each
/// subject's series; threshold |Pearson| strictly above `corr_threshold`
/// into a binary adjacency per window; take the raw value at the window's
/// last index as the per-step node feature (D = 1); then assemble
/// overlapping (history_len, horizon) samples per subject.
pub fn window_correlation_graphs(
    subjects: &[SubjectSeries],
    window: usize,
    stride: usize,
    corr_threshold: f64,
    history_len: usize,
    horizon: usize,
) -> Result<Dataset> {
    if window < 2 {
        return Err(DynastyError::Config(format!(
            "correlation window must be at least 2, got {window}"
        )));
    }
    if stride == 0 {
        return Err(DynastyError::Config("stride must be positive".into()));
    }
    if !(0.0..=1.0).contains(&corr_threshold) {
        return Err(DynastyError::Config(format!(
            "correlation threshold {corr_threshold} outside [0, 1]"
        )));
    }
    if subjects.is_empty() {
        return Err(DynastyError::Config("no subjects given".into()));
    }
    let n = subjects[0].num_nodes;
    if subjects.iter().any(|s| s.num_nodes != n) {
        return Err(DynastyError::dim(
            "window_correlation_graphs",
            "subjects disagree on node count",
        ));
    }

    let span = history_len + horizon;
    let dims = Dims { num_nodes: n, feature_dim: 1, history_len, horizon };
    let mut samples = Vec::new();

    for subject in subjects {
        let t_len = subject.len();
        if t_len < window {
            return Err(DynastyError::InsufficientData { needed: window, got: t_len });
        }
        let num_windows = (t_len - window) / stride + 1;
        if num_windows < span {
            return Err(DynastyError::InsufficientData { needed: span, got: num_windows });
        }
        // per window: binary adjacency and the last in-window value per node
        let mut adj = Vec::with_capacity(num_windows);
        let mut feat = Vec::with_capacity(num_windows);
        for k in 0..num_windows {
            let start = k * stride;
            let corr = correlation_matrix(subject, start, window);
            let a: Vec<f64> = corr
                .iter()
                .map(|c| if c.abs() > corr_threshold { 1.0 } else { 0.0 })
                .collect();
            adj.push(a);
            let last_idx = start + window - 1;
            feat.push((0..n).map(|i| subject.at(i, last_idx)).collect::<Vec<f64>>());
        }

        for s in 0..num_windows - span + 1 {
            let mut x_hist = Vec::with_capacity(dims.x_len());
            let mut a_hist = Vec::with_capacity(dims.a_len());
            let mut y = Vec::with_capacity(dims.y_len());
            for i in 0..n {
                for t in 0..history_len {
                    x_hist.push(feat[s + t][i]);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    for t in 0..history_len {
                        a_hist.push(adj[s + t][i * n + j]);
                    }
                }
            }
            for i in 0..n {
                for t in 0..horizon {
                    y.push(feat[s + history_len + t][i]);
                }
            }
            samples.push(DynamicGraphSample {
                sample_id: format!("{}-w{s:04}", subject.id),
                x_hist,
                a_hist,
                y,
            });
        }
    }

    let mut provenance = Provenance::new("window_correlation_graphs", StreamKind::MultiSubject);
    provenance.params = json!({
        "window": window,
        "stride": stride,
        "corr_threshold": corr_threshold,
        "history_len": history_len,
        "horizon": horizon,
        "subjects": subjects.iter().map(|s| s.id.clone()).collect::<Vec<_>>(),
    });
    Dataset::new(samples, dims, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine_subject(id: &str, n: usize, t_len: usize, seed: u64) -> SubjectSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(n * t_len);
        for i in 0..n {
            let phase: f64 = rng.gen_range(0.0..6.28);
            let freq: f64 = rng.gen_range(0.05..0.3);
            for t in 0..t_len {
                values.push((freq * t as f64 + phase).sin() + 0.01 * rng.gen_range(-1.0..1.0));
            }
        }
        SubjectSeries { id: id.into(), num_nodes: n, values }
    }

    #[test]
    fn identical_nodes_are_connected_for_any_subunit_threshold() {
        // node 1 is an exact copy of node 0
        let base: Vec<f64> = (0..30).map(|t| (0.3 * t as f64).sin()).collect();
        let mut values = base.clone();
        values.extend_from_slice(&base);
        let subject = SubjectSeries { id: "s".into(), num_nodes: 2, values };
        let ds = window_correlation_graphs(&[subject], 20, 1, 0.99, 6, 2).unwrap();
        let s = &ds.samples[0];
        let l = ds.dims.history_len;
        for t in 0..l {
            assert_eq!(s.a_hist[(0 * 2 + 1) * l + t], 1.0);
            assert_eq!(s.a_hist[(1 * 2) * l + t], 1.0);
        }
    }

    #[test]
    fn window_count_matches_hand_arithmetic() {
        // T=30, w=20, s=1 -> 11 windows
        let subject = sine_subject("s", 3, 30, 1);
        let num_windows = (subject.len() - 20) / 1 + 1;
        assert_eq!(num_windows, 11);
        // with L=8, H=2 -> 11 - 10 + 1 = 2 samples
        let ds = window_correlation_graphs(&[subject], 20, 1, 0.8, 8, 2).unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn anticorrelated_pair_connects_through_absolute_value() {
        // node 1 = -node 0 plus a small orthogonal wobble
        let base: Vec<f64> = (0..40).map(|t| (0.4 * t as f64).sin()).collect();
        let wobble: Vec<f64> = (0..40).map(|t| if t % 2 == 0 { 0.18 } else { -0.18 }).collect();
        let mut values = base.clone();
        values.extend(base.iter().zip(&wobble).map(|(v, w)| -v + w));
        let subject = SubjectSeries { id: "s".into(), num_nodes: 2, values: values.clone() };

        // scalar oracle: strong negative but not exactly -1
        let a: Vec<f64> = base[0..20].to_vec();
        let b: Vec<f64> = values[40..60].to_vec();
        let corr = pearson(&a, &b);
        assert!(corr < -0.8 && corr > -0.999, "oracle corr {corr}");

        let ds = window_correlation_graphs(&[subject], 20, 1, 0.8, 6, 2).unwrap();
        let s = &ds.samples[0];
        let l = ds.dims.history_len;
        assert_eq!(s.a_hist[(0 * 2 + 1) * l], 1.0);
    }

    #[test]
    fn matrices_are_symmetric_with_unit_diagonal_before_thresholding() {
        let subject = sine_subject("s", 5, 40, 7);
        for start in [0, 5, 10] {
            let m = correlation_matrix(&subject, start, 20);
            for i in 0..5 {
                assert!((m[i * 5 + i] - 1.0).abs() < 1e-12);
                for j in 0..5 {
                    assert_eq!(m[i * 5 + j], m[j * 5 + i]);
                }
            }
        }
    }

    #[test]
    fn thresholded_matrices_are_binary_and_symmetric() {
        let subject = sine_subject("s", 4, 40, 9);
        let ds = window_correlation_graphs(&[subject], 20, 1, 0.8, 6, 2).unwrap();
        let n = 4;
        let l = ds.dims.history_len;
        for s in &ds.samples {
            for t in 0..l {
                for i in 0..n {
                    for j in 0..n {
                        let v = s.a_hist[(i * n + j) * l + t];
                        assert!(v == 0.0 || v == 1.0);
                        assert_eq!(v, s.a_hist[(j * n + i) * l + t]);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_variance_node_correlates_zero() {
        let flat = vec![2.5; 25];
        let wave: Vec<f64> = (0..25).map(|t| (0.5 * t as f64).sin()).collect();
        assert_eq!(pearson(&flat, &wave), 0.0);
        assert_eq!(pearson(&flat, &flat), 0.0);
    }

    #[test]
    fn tiny_window_is_a_configuration_error() {
        let subject = sine_subject("s", 2, 30, 3);
        assert!(matches!(
            window_correlation_graphs(&[subject], 1, 1, 0.8, 4, 2),
            Err(DynastyError::Config(_))
        ));
    }
}
