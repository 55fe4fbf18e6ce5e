//! Synthetic diffusion dataset: signals evolve by mixing with neighbor
//! averages on a rewiring random graph, so targets genuinely depend on the
//! evolving topology.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{standard_normal, Dataset, Dims, DynamicGraphSample, Provenance, StreamKind};
use crate::error::{DynastyError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub history_len: usize,
    pub horizon: usize,
    pub num_samples: usize,
    /// Per-step probability of redrawing the graph.
    pub graph_switch_prob: f64,
    pub noise_std: f64,
    /// Mixing weight toward the neighbor average, in [0, 1].
    pub beta: f64,
    /// Off-diagonal edge probability of the random symmetric graph.
    pub edge_prob: f64,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            num_nodes: 10,
            feature_dim: 1,
            history_len: 12,
            horizon: 8,
            num_samples: 8,
            graph_switch_prob: 0.2,
            noise_std: 0.05,
            beta: 0.7,
            edge_prob: 0.3,
            seed: 0,
        }
    }
}

/// One diffusion step `x' = (1−β)·x + β·rownorm(A)·x` per feature dim.
/// `a` is [n, n] including any self loops; rows summing to zero contribute
/// nothing.
pub fn diffusion_step(x: &[f64], a: &[f64], n: usize, d: usize, beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        let row_sum: f64 = row.iter().sum();
        for f in 0..d {
            let mut mixed = 0.0;
            if row_sum != 0.0 {
                for j in 0..n {
                    mixed += row[j] * x[j * d + f];
                }
                mixed /= row_sum;
            }
            out[i * d + f] = (1.0 - beta) * x[i * d + f] + beta * mixed;
        }
    }
    out
}

fn random_graph(n: usize, edge_prob: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
        for j in i + 1..n {
            if rng.gen::<f64>() < edge_prob {
                a[i * n + j] = 1.0;
                a[j * n + i] = 1.0;
            }
        }
    }
    a
}

/// Generate `num_samples` independent trajectories. Each sample draws its
/// own graph, rewires it with probability `graph_switch_prob` per step, and
/// evolves signals through `history_len + horizon` frames; only the first
/// `history_len` adjacency slices are stored, matching the model's inputs.
pub fn generate_diffusion_dataset(config: &DiffusionConfig) -> Result<Dataset> {
    if config.num_nodes == 0
        || config.feature_dim == 0
        || config.history_len == 0
        || config.horizon == 0
        || config.num_samples == 0
    {
        return Err(DynastyError::Config("diffusion sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.edge_prob) {
        return Err(DynastyError::Config(format!(
            "impossible sparsity target: edge_prob {} outside [0, 1]",
            config.edge_prob
        )));
    }
    for (name, p) in [("graph_switch_prob", config.graph_switch_prob), ("beta", config.beta)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(DynastyError::Config(format!("{name} {p} outside [0, 1]")));
        }
    }
    if config.noise_std < 0.0 {
        return Err(DynastyError::Config("noise_std must be nonnegative".into()));
    }

    let (n, d, l, h) = (config.num_nodes, config.feature_dim, config.history_len, config.horizon);
    let dims = Dims { num_nodes: n, feature_dim: d, history_len: l, horizon: h };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples = Vec::with_capacity(config.num_samples);

    for idx in 0..config.num_samples {
        let mut x: Vec<f64> = (0..n * d).map(|_| standard_normal(&mut rng)).collect();
        let mut graph = random_graph(n, config.edge_prob, &mut rng);

        let mut x_hist = Vec::with_capacity(dims.x_len());
        let mut a_hist = Vec::with_capacity(dims.a_len());
        let mut y = Vec::with_capacity(dims.y_len());
        let mut frames: Vec<Vec<f64>> = Vec::with_capacity(l + h);
        let mut graphs: Vec<Vec<f64>> = Vec::with_capacity(l);

        for t in 0..l + h {
            if t > 0 && rng.gen::<f64>() < config.graph_switch_prob {
                graph = random_graph(n, config.edge_prob, &mut rng);
            }
            frames.push(x.clone());
            if t < l {
                graphs.push(graph.clone());
            }
            let mut next = diffusion_step(&x, &graph, n, d, config.beta);
            if config.noise_std > 0.0 {
                for v in &mut next {
                    *v += config.noise_std * standard_normal(&mut rng);
                }
            }
            x = next;
        }

        // reorder frame-major data into [N, D, T] layout
        for i in 0..n {
            for f in 0..d {
                for frame in frames.iter().take(l) {
                    x_hist.push(frame[i * d + f]);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for g in &graphs {
                    a_hist.push(g[i * n + j]);
                }
            }
        }
        for i in 0..n {
            for f in 0..d {
                for frame in frames.iter().skip(l) {
                    y.push(frame[i * d + f]);
                }
            }
        }

        samples.push(DynamicGraphSample {
            sample_id: format!("diffusion-{idx:04}"),
            x_hist,
            a_hist,
            y,
        });
    }

    let mut provenance = Provenance::new("generate_diffusion_dataset", StreamKind::MultiSubject);
    provenance.params = serde_json::to_value(config)?;
    provenance.seed = config.seed;
    Dataset::new(samples, dims, provenance)
}
