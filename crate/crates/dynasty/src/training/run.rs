//! The pretrain → fine-tune loops: masked reconstruction first, then
//! scheduled-sampling forecasting with a horizon curriculum and early
//! stopping on validation RMSE.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{
    apply_mask, curriculum_horizon, masked_pretrain_loss, sample_mask, teacher_forcing_prob,
    total_loss,
};
use super::{Adam, TrainConfig};
use crate::data::Dataset;
use crate::error::{DynastyError, Result};
use crate::eval::evaluate_model;
use crate::model::{forecast, reconstruct, ForecastMode, ModelConfig, ModelParameters};
use crate::tensor::{Tape, Tensor};

/// One fine-tuning epoch's record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    pub tf_prob: f64,
    pub horizon: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the minimal validation RMSE.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// CSV with the stable header `epoch,train_loss,val_rmse,tf_prob,horizon,seconds`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_rmse,tf_prob,horizon,seconds")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{},{:.6}",
                r.epoch, r.train_loss, r.val_rmse, r.tf_prob, r.horizon, r.seconds
            )?;
        }
        Ok(())
    }
}

fn check_dims(config: &ModelConfig, dataset: &Dataset, what: &str) -> Result<()> {
    let d = dataset.dims;
    if d.feature_dim != config.feature_dim
        || d.history_len != config.history_len
        || d.horizon != config.horizon
    {
        return Err(DynastyError::Config(format!(
            "{what} dataset dims {:?} do not match the model config (D={}, L={}, H={})",
            d, config.feature_dim, config.history_len, config.horizon
        )));
    }
    Ok(())
}

fn trainable_subset(params: &ModelParameters, frozen: &[String]) -> Vec<(String, Tensor)> {
    params
        .param_set()
        .into_iter()
        .filter(|(name, _)| !frozen.iter().any(|f| f == name))
        .collect()
}

/// Average a batch of scalar losses on the tape.
fn mean_of(tape: &mut Tape, parts: &[Tensor]) -> Result<Tensor> {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        acc = tape.add(&acc, p)?;
    }
    tape.scalar_mul(&acc, 1.0 / parts.len() as f64)
}

/// Masked-reconstruction pretraining. Returns per-epoch mean losses.
/// `frozen` names parameters excluded from optimization.
pub fn run_pretraining(
    params: &ModelParameters,
    config: &ModelConfig,
    dataset: &Dataset,
    cfg: &TrainConfig,
    frozen: &[String],
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(DynastyError::Config("pretraining on an empty dataset".into()));
    }
    check_dims(config, dataset, "pretraining")?;
    cfg.validate(config.horizon)?;
    let trainable = trainable_subset(params, frozen);
    let mut adam = Adam::new(&trainable);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5052_4554);
    let dims = dataset.dims;
    let mut epoch_losses = Vec::with_capacity(cfg.pretrain_epochs);

    for _ in 0..cfg.pretrain_epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut parts = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let sample = &dataset.samples[i];
                let x = sample.x_tensor(&dims);
                let a = sample.a_tensor(&dims);
                let mask = sample_mask(
                    dims.num_nodes,
                    dims.feature_dim,
                    dims.history_len,
                    cfg.mask_prob,
                    &mut rng,
                )?;
                let masked = apply_mask(&x, &mask)?;
                let x_hat = reconstruct(&mut tape, &masked, &a, params, config)?;
                parts.push(masked_pretrain_loss(&mut tape, &x_hat, &x, &mask, cfg.epsilon)?);
            }
            let batch_loss = mean_of(&mut tape, &parts)?;
            loss_sum += batch_loss.item() * chunk.len() as f64;
            params.zero_grads();
            tape.backward(&batch_loss)?;
            if let Some(max_norm) = cfg.grad_clip_norm {
                Adam::clip_global_norm(&trainable, max_norm);
            }
            adam.step(&trainable, cfg.learning_rate)?;
        }
        epoch_losses.push(loss_sum / dataset.len() as f64);
    }
    Ok(epoch_losses)
}

/// Fine-tune with scheduled sampling, the horizon curriculum, and early
/// stopping on denormalized validation RMSE at the full horizon. The
/// parameters end at the best-validation snapshot.
pub fn run_training(
    params: &ModelParameters,
    config: &ModelConfig,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    frozen: &[String],
) -> Result<TrainHistory> {
    if train.is_empty() || val.is_empty() {
        return Err(DynastyError::Config("training requires nonempty train and val splits".into()));
    }
    check_dims(config, train, "train")?;
    check_dims(config, val, "validation")?;
    cfg.validate(config.horizon)?;
    match (train.norm_stats(), val.norm_stats()) {
        (Some(a), Some(b)) if a == b => {}
        (Some(_), Some(_)) => {
            return Err(DynastyError::Config(
                "train and validation splits were normalized with different stats".into(),
            ))
        }
        _ => {
            return Err(DynastyError::Config(
                "training requires both splits normalized (stats recorded in provenance)".into(),
            ))
        }
    }

    let trainable = trainable_subset(params, frozen);
    let mut adam = Adam::new(&trainable);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5452_4149);
    let dims = train.dims;
    let horizon = config.horizon;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let active_h = curriculum_horizon(
            epoch,
            cfg.curriculum_start_horizon,
            cfg.curriculum_step_epochs,
            horizon,
        );
        let tf_prob = teacher_forcing_prob(epoch, cfg.sampling_decay_epochs)?;

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut parts = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let sample = &train.samples[i];
                let x = sample.x_tensor(&dims);
                let a = sample.a_tensor(&dims);
                let y = sample.y_tensor(&dims);
                let pred = forecast(
                    &mut tape,
                    &x,
                    &a,
                    params,
                    config,
                    &ForecastMode::Scheduled { targets: &y, prob: tf_prob, mix_alpha: cfg.mix_alpha },
                    true,
                    &mut rng,
                )?;
                let (pred_a, y_a) = if active_h < horizon {
                    (tape.slice(&pred, 2, 0, active_h)?, tape.slice(&y, 2, 0, active_h)?)
                } else {
                    (pred, y)
                };
                parts.push(total_loss(&mut tape, &pred_a, &y_a, cfg.lambda_var, cfg.horizon_decay)?);
            }
            let batch_loss = mean_of(&mut tape, &parts)?;
            loss_sum += batch_loss.item() * chunk.len() as f64;
            params.zero_grads();
            tape.backward(&batch_loss)?;
            if let Some(max_norm) = cfg.grad_clip_norm {
                Adam::clip_global_norm(&trainable, max_norm);
            }
            adam.step(&trainable, cfg.learning_rate)?;
        }
        let train_loss = loss_sum / train.len() as f64;

        let val_rmse = evaluate_model(params, config, val)?.rmse;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_rmse,
            tf_prob,
            horizon: active_h,
            seconds: started.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().map_or(true, |(b, _)| val_rmse < *b);
        if improved {
            best = Some((val_rmse, params.snapshot()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    if let Some((_, snapshot)) = &best {
        params.restore(snapshot);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        apply_normalization, fit_normalizer, generate_diffusion_dataset, split_dataset,
        DiffusionConfig,
    };

    fn tiny_setup(num_samples: usize, seed: u64) -> (ModelConfig, Dataset, Dataset, Dataset) {
        let gen = DiffusionConfig {
            num_nodes: 5,
            history_len: 6,
            horizon: 4,
            num_samples,
            seed,
            ..DiffusionConfig::default()
        };
        let ds = generate_diffusion_dataset(&gen).unwrap();
        let (train_raw, val_raw, test_raw) = split_dataset(&ds, [0.7, 0.1, 0.2]).unwrap();
        let stats = fit_normalizer(&train_raw).unwrap();
        let train = apply_normalization(&train_raw, &stats).unwrap();
        let val = apply_normalization(&val_raw, &stats).unwrap();
        let test = apply_normalization(&test_raw, &stats).unwrap();
        let config = ModelConfig {
            feature_dim: 1,
            hidden_dim: 8,
            num_heads: 2,
            num_layers: 1,
            history_len: 6,
            horizon: 4,
            edge_dropout_rate: 0.1,
            feature_dropout_rate: 0.1,
            bias_mlp_hidden: 4,
            ..ModelConfig::default()
        };
        (config, train, val, test)
    }

    fn quick_train_config() -> TrainConfig {
        TrainConfig {
            max_epochs: 3,
            pretrain_epochs: 2,
            batch_size: 4,
            sampling_decay_epochs: 3,
            curriculum_start_horizon: 2,
            curriculum_step_epochs: 1,
            early_stop_patience: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_pretrain_epochs_leave_the_model_unchanged() {
        let (config, train, _, _) = tiny_setup(10, 1);
        let params = ModelParameters::init(&config, 7).unwrap();
        let before = params.snapshot();
        let cfg = TrainConfig { pretrain_epochs: 0, ..quick_train_config() };
        let losses = run_pretraining(&params, &config, &train, &cfg, &[]).unwrap();
        assert!(losses.is_empty());
        assert_eq!(params.snapshot(), before);
    }

    #[test]
    fn pretraining_reduces_reconstruction_loss() {
        let (config, train, _, _) = tiny_setup(10, 2);
        let params = ModelParameters::init(&config, 8).unwrap();
        let cfg = TrainConfig { pretrain_epochs: 15, batch_size: 4, ..quick_train_config() };
        let losses = run_pretraining(&params, &config, &train, &cfg, &[]).unwrap();
        assert_eq!(losses.len(), 15);
        assert!(
            losses[14] < losses[0],
            "pretraining did not improve: first {} last {}",
            losses[0],
            losses[14]
        );
    }

    #[test]
    fn pretraining_is_reproducible_under_a_seed() {
        let (config, train, _, _) = tiny_setup(8, 3);
        let run = || {
            let params = ModelParameters::init(&config, 9).unwrap();
            let cfg = quick_train_config();
            run_pretraining(&params, &config, &train, &cfg, &[]).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn empty_dataset_is_a_configuration_error() {
        let (config, train, _, _) = tiny_setup(8, 4);
        let empty = Dataset::new(Vec::new(), train.dims, train.provenance.clone()).unwrap();
        let params = ModelParameters::init(&config, 1).unwrap();
        assert!(matches!(
            run_pretraining(&params, &config, &empty, &quick_train_config(), &[]),
            Err(DynastyError::Config(_))
        ));
    }

    #[test]
    fn zero_epochs_return_initial_model_and_empty_history() {
        let (config, train, val, _) = tiny_setup(10, 5);
        let params = ModelParameters::init(&config, 2).unwrap();
        let before = params.snapshot();
        let cfg = TrainConfig { max_epochs: 0, ..quick_train_config() };
        let history = run_training(&params, &config, &train, &val, &cfg, &[]).unwrap();
        assert!(history.epochs.is_empty());
        assert!(history.best_epoch.is_none());
        assert_eq!(params.snapshot(), before);
    }

    #[test]
    fn mismatched_normalization_is_rejected() {
        let (config, train, _, _) = tiny_setup(10, 6);
        let gen = DiffusionConfig {
            num_nodes: 5,
            history_len: 6,
            horizon: 4,
            num_samples: 10,
            seed: 77,
            noise_std: 0.5,
            ..DiffusionConfig::default()
        };
        let other = generate_diffusion_dataset(&gen).unwrap();
        let other_stats = fit_normalizer(&other).unwrap();
        let bad_val = apply_normalization(&other, &other_stats).unwrap();
        let params = ModelParameters::init(&config, 3).unwrap();
        assert!(matches!(
            run_training(&params, &config, &train, &bad_val, &quick_train_config(), &[]),
            Err(DynastyError::Config(_))
        ));
    }

    #[test]
    fn seeded_runs_are_identical_and_different_seeds_differ() {
        let (config, train, val, _) = tiny_setup(10, 7);
        let run = |seed: u64| {
            let params = ModelParameters::init(&config, 11).unwrap();
            let cfg = TrainConfig { seed, ..quick_train_config() };
            let history = run_training(&params, &config, &train, &val, &cfg, &[]).unwrap();
            (history, params.snapshot())
        };
        let (h1, p1) = run(0);
        let (h2, p2) = run(0);
        let (h3, _) = run(42);
        assert_eq!(h1.epochs.len(), h2.epochs.len());
        for (a, b) in h1.epochs.iter().zip(&h2.epochs) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_rmse.to_bits(), b.val_rmse.to_bits());
        }
        assert_eq!(p1, p2);
        assert!(h1
            .epochs
            .iter()
            .zip(&h3.epochs)
            .any(|(a, b)| a.train_loss.to_bits() != b.train_loss.to_bits()));
    }

    #[test]
    fn history_records_schedules_and_csv_shape() {
        let (config, train, val, _) = tiny_setup(10, 8);
        let params = ModelParameters::init(&config, 13).unwrap();
        let cfg = TrainConfig {
            max_epochs: 4,
            sampling_decay_epochs: 2,
            curriculum_start_horizon: 1,
            curriculum_step_epochs: 2,
            ..quick_train_config()
        };
        let history = run_training(&params, &config, &train, &val, &cfg, &[]).unwrap();
        assert_eq!(history.epochs.len(), 4);
        assert_eq!(history.epochs[0].tf_prob, 1.0);
        assert_eq!(history.epochs[2].tf_prob, 0.0);
        assert_eq!(history.epochs[0].horizon, 1);
        assert_eq!(history.epochs[2].horizon, 2);
        let best = history.best_epoch.unwrap();
        let best_rmse = history.epochs[best].val_rmse;
        for e in &history.epochs {
            assert!(best_rmse <= e.val_rmse);
        }

        let mut csv = Vec::new();
        history.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_rmse,tf_prob,horizon,seconds");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (config, train, val, _) = tiny_setup(10, 9);
        let params = ModelParameters::init(&config, 17).unwrap();
        params.zero_edge_bias_outputs();
        let frozen = params.edge_bias_output_names();
        let cfg = quick_train_config();
        run_training(&params, &config, &train, &val, &cfg, &frozen).unwrap();
        for (name, t) in params.param_set() {
            if frozen.contains(&name) {
                assert!(t.values_vec().iter().all(|&v| v == 0.0), "{name} moved");
            }
        }
    }
}
