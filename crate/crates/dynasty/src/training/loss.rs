//! Loss functions (differentiable, built from tape ops), masking, and the
//! scalar training schedules.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DynastyError, Result};
use crate::tensor::{Tape, Tensor};

fn check_pair(op: &str, pred: &Tensor, truth: &Tensor) -> Result<(usize, usize, usize)> {
    if pred.shape() != truth.shape() {
        return Err(DynastyError::dim(
            op,
            format!("prediction shape {:?} vs target shape {:?}", pred.shape(), truth.shape()),
        ));
    }
    match *pred.shape() {
        [n, d, h] => Ok((n, d, h)),
        ref s => Err(DynastyError::dim(op, format!("expected [N, D, H], got {s:?}"))),
    }
}

/// Normalized exponentially-decaying horizon weights
/// `w_t = γ^(t-1) / Σ_s γ^(s-1)`; they sum to one for any γ in (0, 1].
pub fn horizon_weights(horizon: usize, gamma: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..horizon).map(|t| gamma.powi(t as i32)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// `Σ_t w_t · mean_{N,D} |pred_t − true_t|` with normalized exponentially
/// decaying weights.
pub fn horizon_weighted_mae(
    tape: &mut Tape,
    pred: &Tensor,
    truth: &Tensor,
    gamma: f64,
) -> Result<Tensor> {
    let (n, d, h) = check_pair("horizon_weighted_mae", pred, truth)?;
    let weights = Tensor::from_vec(&[h], horizon_weights(h, gamma))?;
    let diff = tape.sub(pred, truth)?;
    let abs = tape.abs(&diff)?;
    let weighted = tape.mul(&abs, &weights)?;
    let total = tape.sum_all(&weighted)?;
    tape.scalar_mul(&total, 1.0 / (n * d) as f64)
}

/// Mean absolute mismatch of frame-to-frame differences:
/// `Σ_t mean_{N,D} |(pred_{t+1}−pred_t) − (true_{t+1}−true_t)|`.
/// Zero when fewer than two steps exist.
pub fn variation_loss(tape: &mut Tape, pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    let (n, d, h) = check_pair("variation_loss", pred, truth)?;
    if h < 2 {
        return Ok(Tensor::scalar(0.0));
    }
    let p_hi = tape.slice(pred, 2, 1, h)?;
    let p_lo = tape.slice(pred, 2, 0, h - 1)?;
    let dp = tape.sub(&p_hi, &p_lo)?;
    let t_hi = tape.slice(truth, 2, 1, h)?;
    let t_lo = tape.slice(truth, 2, 0, h - 1)?;
    let dt = tape.sub(&t_hi, &t_lo)?;
    let diff = tape.sub(&dp, &dt)?;
    let abs = tape.abs(&diff)?;
    let total = tape.sum_all(&abs)?;
    tape.scalar_mul(&total, 1.0 / (n * d) as f64)
}

/// `L = L_MAE + λ · L_var`.
pub fn total_loss(
    tape: &mut Tape,
    pred: &Tensor,
    truth: &Tensor,
    lambda: f64,
    gamma: f64,
) -> Result<Tensor> {
    let mae = horizon_weighted_mae(tape, pred, truth, gamma)?;
    if lambda == 0.0 {
        return Ok(mae);
    }
    let var = variation_loss(tape, pred, truth)?;
    let weighted = tape.scalar_mul(&var, lambda)?;
    tape.add(&mae, &weighted)
}

/// Independent Bernoulli(p) mask over [N, D, L]. An all-zero draw is
/// resampled once and the second draw kept as-is.
pub fn sample_mask(
    n: usize,
    d: usize,
    l: usize,
    p_mask: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&p_mask) {
        return Err(DynastyError::Config(format!("mask probability {p_mask} outside [0, 1]")));
    }
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n * d * l).map(|_| if rng.gen::<f64>() < p_mask { 1.0 } else { 0.0 }).collect()
    };
    let mut mask = draw(rng);
    if mask.iter().all(|&m| m == 0.0) {
        mask = draw(rng);
    }
    Tensor::from_vec(&[n, d, l], mask)
}

/// Apply a mask: `X ⊙ (1 − M)` on raw values (the mask carries no gradient).
pub fn apply_mask(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if x.shape() != mask.shape() {
        return Err(DynastyError::dim(
            "apply_mask",
            format!("input shape {:?} vs mask shape {:?}", x.shape(), mask.shape()),
        ));
    }
    let values: Vec<f64> =
        x.values().iter().zip(mask.values().iter()).map(|(v, m)| v * (1.0 - m)).collect();
    Tensor::from_vec(x.shape(), values)
}

/// Squared reconstruction error at masked positions over masked count:
/// `‖(X̂ − X) ⊙ M‖² / (‖M‖₁ + ε)`.
pub fn masked_pretrain_loss(
    tape: &mut Tape,
    x_hat: &Tensor,
    x_true: &Tensor,
    mask: &Tensor,
    epsilon: f64,
) -> Result<Tensor> {
    if x_hat.shape() != x_true.shape() || x_hat.shape() != mask.shape() {
        return Err(DynastyError::dim(
            "masked_pretrain_loss",
            format!(
                "shapes disagree: reconstruction {:?}, input {:?}, mask {:?}",
                x_hat.shape(),
                x_true.shape(),
                mask.shape()
            ),
        ));
    }
    let masked_count: f64 = mask.values().iter().sum();
    let diff = tape.sub(x_hat, x_true)?;
    let masked = tape.mul(&diff, mask)?;
    let sq = tape.square(&masked)?;
    let total = tape.sum_all(&sq)?;
    tape.scalar_mul(&total, 1.0 / (masked_count + epsilon))
}

/// Linearly decaying teacher-forcing probability:
/// `max(0, 1 − epoch/decay_epochs)`.
pub fn teacher_forcing_prob(epoch: usize, sampling_decay_epochs: usize) -> Result<f64> {
    if sampling_decay_epochs == 0 {
        return Err(DynastyError::Config("sampling_decay_epochs must be positive".into()));
    }
    Ok((1.0 - epoch as f64 / sampling_decay_epochs as f64).max(0.0))
}

/// Active training horizon under the curriculum:
/// `min(H, start + epoch/step_epochs)`. Validation always uses the full H.
pub fn curriculum_horizon(epoch: usize, start: usize, step_epochs: usize, horizon: usize) -> usize {
    debug_assert!(step_epochs > 0);
    horizon.min(start + epoch / step_epochs)
}
