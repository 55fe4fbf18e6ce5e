//! Central-finite-difference verification of recorded gradients.

use super::{Tape, Tensor};
use crate::error::{DynastyError, Result};

/// Verdict for one checked parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    /// max over elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_err: f64,
    /// |analytic - numeric| at the worst element.
    pub abs_diff: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failing(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

fn eval_loss(build: &impl Fn(&mut Tape) -> Result<Tensor>) -> Result<f64> {
    let mut tape = Tape::inference();
    let loss = build(&mut tape)?;
    if loss.len() != 1 {
        return Err(DynastyError::Contract(format!(
            "grad_check build must produce a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    Ok(loss.item())
}

/// Compare the backward gradients of `build`'s loss against central finite
/// differences over every element of every parameter.
///
/// `build` must be a deterministic function of the parameter values; two
/// identical evaluations disagreeing is a determinism error.
///
/// An element passes when its relative error is within `tol` or when the
/// absolute analytic/numeric difference sits below the finite-difference
/// roundoff floor `1e-14·max(1, |loss|)/(2·step)`. Without the floor,
/// parameters whose gradient is structurally zero (a constant shift under a
/// row softmax, say) would be judged by pure f64 cancellation noise.
pub fn grad_check(
    build: impl Fn(&mut Tape) -> Result<Tensor>,
    params: &[(String, Tensor)],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(DynastyError::Config(format!("grad_check step must be positive, got {step}")));
    }
    let base = eval_loss(&build)?;
    let again = eval_loss(&build)?;
    if base.to_bits() != again.to_bits() {
        return Err(DynastyError::Determinism(format!(
            "grad_check build is not deterministic: {base} vs {again}"
        )));
    }
    let noise_floor = 1e-14 * base.abs().max(1.0) / (2.0 * step);

    for (_, p) in params {
        p.zero_grad();
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape)?;
    tape.backward(&loss)?;

    let mut report = GradCheckReport { params: Vec::new(), max_rel_err: 0.0, passed: true };
    for (name, p) in params {
        let analytic = p.grad().ok_or_else(|| {
            DynastyError::Contract(format!("parameter `{name}` received no gradient"))
        })?;
        let mut worst = (0.0f64, 0.0f64, 0usize);
        let mut passed = true;
        for i in 0..p.len() {
            let original = p.values()[i];
            p.update_values(|v| v[i] = original + step);
            let plus = eval_loss(&build)?;
            p.update_values(|v| v[i] = original - step);
            let minus = eval_loss(&build)?;
            p.update_values(|v| v[i] = original);
            let numeric = (plus - minus) / (2.0 * step);
            let abs_diff = (analytic[i] - numeric).abs();
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            let rel = abs_diff / denom;
            passed &= rel <= tol || abs_diff <= noise_floor;
            if rel > worst.0 {
                worst = (rel, abs_diff, i);
            }
        }
        report.max_rel_err = report.max_rel_err.max(worst.0);
        report.passed &= passed;
        report.params.push(ParamCheck {
            name: name.clone(),
            max_rel_err: worst.0,
            abs_diff: worst.1,
            worst_index: worst.2,
            passed,
        });
    }
    Ok(report)
}
