//! Metrics, model evaluation, the node-independent recurrent baseline, and
//! the ablation suite.

mod ablation;
mod baseline;

pub use ablation::{run_ablation_suite, AblationCell, AblationSpec, AblationSummary, AblationTable, AblationToggle};
pub use baseline::baseline_forecast;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{invert_values, Dataset, DynamicGraphSample, NormStats};
use crate::error::{DynastyError, Result};
use crate::model::{forecast, ForecastMode, ModelConfig, ModelParameters};
use crate::tensor::Tape;

/// Aggregate and per-horizon-step error metrics in denormalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub per_step_mae: Vec<f64>,
    pub per_step_rmse: Vec<f64>,
}

/// Accumulates |error| and error² sums across samples with a fixed
/// reduction order.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    horizon: usize,
    abs_sum: Vec<f64>,
    sq_sum: Vec<f64>,
    per_step_count: f64,
}

impl MetricsAccumulator {
    pub fn new(horizon: usize) -> Self {
        MetricsAccumulator {
            horizon,
            abs_sum: vec![0.0; horizon],
            sq_sum: vec![0.0; horizon],
            per_step_count: 0.0,
        }
    }

    /// Add one [N, D, H] prediction/target pair.
    pub fn add(&mut self, pred: &[f64], truth: &[f64], horizon: usize) -> Result<()> {
        if pred.len() != truth.len() || horizon != self.horizon || pred.len() % horizon != 0 {
            return Err(DynastyError::dim(
                "compute_metrics",
                format!(
                    "prediction has {} values, target {}, horizon {horizon}",
                    pred.len(),
                    truth.len()
                ),
            ));
        }
        for (idx, (p, t)) in pred.iter().zip(truth).enumerate() {
            let step = idx % horizon;
            let e = p - t;
            self.abs_sum[step] += e.abs();
            self.sq_sum[step] += e * e;
        }
        self.per_step_count += (pred.len() / horizon) as f64;
        Ok(())
    }

    pub fn finish(&self) -> Metrics {
        let c = self.per_step_count.max(1.0);
        let per_step_mae: Vec<f64> = self.abs_sum.iter().map(|s| s / c).collect();
        let per_step_rmse: Vec<f64> = self.sq_sum.iter().map(|s| (s / c).sqrt()).collect();
        let total = c * self.horizon as f64;
        let mae = self.abs_sum.iter().sum::<f64>() / total;
        let rmse = (self.sq_sum.iter().sum::<f64>() / total).sqrt();
        Metrics { mae, rmse, per_step_mae, per_step_rmse }
    }
}

/// MAE, RMSE and their per-horizon-step breakdowns for one [N, D, H] pair.
pub fn compute_metrics(pred: &[f64], truth: &[f64], horizon: usize) -> Result<Metrics> {
    let mut acc = MetricsAccumulator::new(horizon);
    acc.add(pred, truth, horizon)?;
    Ok(acc.finish())
}

/// Evaluation result, including run provenance. Wall time is tracked in
/// memory but excluded from serialization so reports are byte-reproducible;
/// the run manifest carries timing instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub rmse: f64,
    pub per_step_mae: Vec<f64>,
    pub per_step_rmse: Vec<f64>,
    pub sample_count: usize,
    pub model: String,
    pub dataset: String,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl EvalReport {
    fn from_metrics(m: Metrics, sample_count: usize, model: String, dataset: String, wall: f64) -> Self {
        debug_assert!(m.rmse >= m.mae - 1e-12);
        EvalReport {
            mae: m.mae,
            rmse: m.rmse,
            per_step_mae: m.per_step_mae,
            per_step_rmse: m.per_step_rmse,
            sample_count,
            model,
            dataset,
            wall_seconds: wall,
        }
    }
}

/// Evaluate an arbitrary forecaster over a normalized dataset. The
/// forecaster returns normalized [N, D, H] values; predictions and targets
/// are denormalized before the metrics.
pub fn evaluate_with(
    mut forecaster: impl FnMut(&DynamicGraphSample) -> Result<Vec<f64>>,
    dataset: &Dataset,
    stats: &NormStats,
    model_desc: &str,
) -> Result<EvalReport> {
    let started = Instant::now();
    let dims = dataset.dims;
    let mut acc = MetricsAccumulator::new(dims.horizon);
    for sample in &dataset.samples {
        let mut pred = forecaster(sample)?;
        if pred.len() != dims.y_len() {
            return Err(DynastyError::dim(
                "evaluate_with",
                format!("forecaster returned {} values, expected {}", pred.len(), dims.y_len()),
            ));
        }
        let mut truth = sample.y.clone();
        invert_values(stats, &mut pred, dims.horizon);
        invert_values(stats, &mut truth, dims.horizon);
        acc.add(&pred, &truth, dims.horizon)?;
    }
    Ok(EvalReport::from_metrics(
        acc.finish(),
        dataset.len(),
        model_desc.to_string(),
        dataset.provenance.source.clone(),
        started.elapsed().as_secs_f64(),
    ))
}

/// Free-running evaluation of the model over a normalized dataset, dropout
/// off; deterministic given (parameters, dataset).
pub fn evaluate_model(
    params: &ModelParameters,
    config: &ModelConfig,
    dataset: &Dataset,
) -> Result<EvalReport> {
    let stats = dataset
        .norm_stats()
        .ok_or_else(|| {
            DynastyError::Contract("evaluate_model requires a normalized dataset with stats".into())
        })?
        .clone();
    let dims = dataset.dims;
    let desc = format!(
        "dynasty(d={}, h={}, layers={}, temporal={})",
        config.hidden_dim, config.num_heads, config.num_layers, config.temporal_attention
    );
    evaluate_with(
        |sample| {
            let mut tape = Tape::inference();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let pred = forecast(
                &mut tape,
                &sample.x_tensor(&dims),
                &sample.a_tensor(&dims),
                params,
                config,
                &ForecastMode::FreeRunning,
                false,
                &mut rng,
            )?;
            Ok(pred.values_vec())
        },
        dataset,
        &stats,
        &desc,
    )
}
