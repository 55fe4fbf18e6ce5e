//! Forward computation of the model, expressed in tape ops so gradients
//! come for free.
//!
//! Shape conventions ([..] row-major):
//! - node features `X_hist`: [N, D, L]
//! - adjacency history `A_hist`: [N, N, L]
//! - targets / predictions: [N, D, H]
//! - encoder activations: [N, d, L]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ForecastMode, GruParams, LayerParams, MlpHead, ModelConfig, ModelParameters};
use crate::error::{DynastyError, Result};
use crate::tensor::{Tape, Tensor};

/// Captured attention matrices (row-major, square) from a traced forward
/// pass; each entry is one head at one time step or node.
#[derive(Debug, Default)]
pub struct AttentionTrace {
    pub matrices: Vec<(Vec<f64>, usize)>,
}

impl AttentionTrace {
    pub fn new() -> Self {
        Self::default()
    }
}

fn expect_rank3(op: &str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        ref s => Err(DynastyError::dim(op, format!("expected a rank-3 tensor, got {s:?}"))),
    }
}

/// Project raw features to the hidden width and add the learned positional
/// encoding of each step: `Z[:, :, t] = X[:, :, t]·W + b + PE[t]`.
pub fn embed_inputs(
    tape: &mut Tape,
    x_hist: &Tensor,
    params: &ModelParameters,
    config: &ModelConfig,
) -> Result<Tensor> {
    let (n, feat, len) = expect_rank3("embed_inputs", x_hist)?;
    if feat != config.feature_dim {
        return Err(DynastyError::dim(
            "embed_inputs",
            format!("feature dim {} does not match configured {}", feat, config.feature_dim),
        ));
    }
    let pe_rows = params.pe_time.shape()[0];
    if len > pe_rows {
        return Err(DynastyError::dim(
            "embed_inputs",
            format!("history length {len} exceeds positional table rows {pe_rows}"),
        ));
    }
    let d = config.hidden_dim;
    let mut steps = Vec::with_capacity(len);
    for t in 0..len {
        let xt3 = tape.slice(x_hist, 2, t, t + 1)?;
        let xt = tape.reshape(&xt3, &[n, feat])?;
        let projected = tape.linear(&xt, &params.input_w, &params.input_b)?;
        let pe_row = tape.slice(&params.pe_time, 0, t, t + 1)?;
        let pe = tape.reshape(&pe_row, &[d])?;
        let zt = tape.add(&projected, &pe)?;
        steps.push(tape.reshape(&zt, &[n, d, 1])?);
    }
    let refs: Vec<&Tensor> = steps.iter().collect();
    tape.concat(&refs, 2)
}

/// Evaluate one layer's edge-bias MLP on every adjacency entry:
/// `B[k, i, j] = MLP(A[i, j])[k]`, one output per head.
pub fn edge_bias(
    tape: &mut Tape,
    a_t: &Tensor,
    layer: &LayerParams,
    num_heads: usize,
) -> Result<Tensor> {
    let sh = a_t.shape();
    if sh.len() != 2 || sh[0] != sh[1] {
        return Err(DynastyError::dim("edge_bias", format!("adjacency must be square, got {sh:?}")));
    }
    let n = sh[0];
    let mut x = tape.reshape(a_t, &[n * n, 1])?;
    let depth = layer.edge_bias.layers.len();
    for (i, (w, b)) in layer.edge_bias.layers.iter().enumerate() {
        x = tape.linear(&x, w, b)?;
        if i + 1 < depth {
            x = tape.relu(&x)?;
        }
    }
    // [N*N, h] -> [h, N, N]
    let xt = tape.transpose(&x)?;
    tape.reshape(&xt, &[num_heads, n, n])
}

fn mlp_head(tape: &mut Tape, x: &Tensor, head: &MlpHead) -> Result<Tensor> {
    let h1 = tape.linear(x, &head.w1, &head.b1)?;
    let act = tape.relu(&h1)?;
    tape.linear(&act, &head.w2, &head.b2)
}

/// Multi-head attention over the rows of `x` ([rows, d]) with optional
/// per-head additive logit bias ([h, rows, rows]).
fn multi_head_attention(
    tape: &mut Tape,
    x: &Tensor,
    proj: &super::AttentionProj,
    num_heads: usize,
    bias: Option<&Tensor>,
    trace: &mut Option<&mut AttentionTrace>,
) -> Result<Tensor> {
    let rows = x.shape()[0];
    let d = x.shape()[1];
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = tape.matmul(x, &proj.wq)?;
    let k = tape.matmul(x, &proj.wk)?;
    let v = tape.matmul(x, &proj.wv)?;

    let mut heads = Vec::with_capacity(num_heads);
    for head in 0..num_heads {
        let (lo, hi) = (head * dh, (head + 1) * dh);
        let qh = tape.slice(&q, 1, lo, hi)?;
        let kh = tape.slice(&k, 1, lo, hi)?;
        let vh = tape.slice(&v, 1, lo, hi)?;
        let kt = tape.transpose(&kh)?;
        let raw = tape.matmul(&qh, &kt)?;
        let mut logits = tape.scalar_mul(&raw, scale)?;
        if let Some(b) = bias {
            let bh3 = tape.slice(b, 0, head, head + 1)?;
            let bh = tape.reshape(&bh3, &[rows, rows])?;
            logits = tape.add(&logits, &bh)?;
        }
        let attn = tape.softmax(&logits, 1)?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.matrices.push((attn.values_vec(), rows));
        }
        heads.push(tape.matmul(&attn, &vh)?);
    }
    let refs: Vec<&Tensor> = heads.iter().collect();
    let cat = tape.concat(&refs, 1)?;
    tape.linear(&cat, &proj.wo, &proj.bo)
}

/// Zero adjacency entries independently with probability `rate`.
/// Operates on raw values: the adjacency itself carries no gradient.
fn edge_drop(a_t: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let values: Vec<f64> =
        a_t.values().iter().map(|&v| if rng.gen::<f64>() < rate { 0.0 } else { v }).collect();
    Tensor::from_vec(a_t.shape(), values).expect("same shape")
}

/// One edge-biased transformer layer at a single time step: per-head
/// `softmax(QKᵀ/√(d/h) + Bias(A_t))` attention, output projection,
/// post-norm residual, then a residual feed-forward block.
pub fn spatial_attention_layer(
    tape: &mut Tape,
    z_t: &Tensor,
    a_t: &Tensor,
    layer: &LayerParams,
    config: &ModelConfig,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    spatial_attention_layer_traced(tape, z_t, a_t, layer, config, train, rng, &mut None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn spatial_attention_layer_traced(
    tape: &mut Tape,
    z_t: &Tensor,
    a_t: &Tensor,
    layer: &LayerParams,
    config: &ModelConfig,
    train: bool,
    rng: &mut ChaCha8Rng,
    trace: &mut Option<&mut AttentionTrace>,
) -> Result<Tensor> {
    let n = z_t.shape()[0];
    if a_t.shape() != [n, n] {
        return Err(DynastyError::dim(
            "spatial_attention_layer",
            format!("features have {} nodes but adjacency shape is {:?}", n, a_t.shape()),
        ));
    }
    let a_used = if train && config.edge_dropout_rate > 0.0 {
        edge_drop(a_t, config.edge_dropout_rate, rng)
    } else {
        a_t.clone()
    };
    let bias = edge_bias(tape, &a_used, layer, config.num_heads)?;

    let attended = multi_head_attention(tape, z_t, &layer.attn, config.num_heads, Some(&bias), trace)?;
    let res1 = tape.add(z_t, &attended)?;
    let x1 = tape.layer_norm(&res1, &layer.ln1_gain, &layer.ln1_offset)?;

    let ff1 = tape.linear(&x1, &layer.ffn_w1, &layer.ffn_b1)?;
    let act = tape.relu(&ff1)?;
    let ff2 = tape.linear(&act, &layer.ffn_w2, &layer.ffn_b2)?;
    let res2 = tape.add(&x1, &ff2)?;
    tape.layer_norm(&res2, &layer.ln2_gain, &layer.ln2_offset)
}

/// Self-attention along the time axis independently per node (no node
/// mixing), with residual + layer norm.
pub fn temporal_self_attention(
    tape: &mut Tape,
    zs: &Tensor,
    params: &ModelParameters,
    config: &ModelConfig,
) -> Result<Tensor> {
    temporal_self_attention_traced(tape, zs, params, config, &mut None)
}

pub(crate) fn temporal_self_attention_traced(
    tape: &mut Tape,
    zs: &Tensor,
    params: &ModelParameters,
    config: &ModelConfig,
    trace: &mut Option<&mut AttentionTrace>,
) -> Result<Tensor> {
    let (n, d, len) = expect_rank3("temporal_self_attention", zs)?;
    let tp = params.temporal.as_ref().ok_or_else(|| {
        DynastyError::Config("temporal_self_attention called without temporal parameters".into())
    })?;
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let node3 = tape.slice(zs, 0, i, i + 1)?;
        let node_dl = tape.reshape(&node3, &[d, len])?;
        let x = tape.transpose(&node_dl)?; // [L, d]
        let attended = multi_head_attention(tape, &x, &tp.attn, config.num_heads, None, trace)?;
        let res = tape.add(&x, &attended)?;
        let normed = tape.layer_norm(&res, &tp.ln_gain, &tp.ln_offset)?;
        let back = tape.transpose(&normed)?;
        nodes.push(tape.reshape(&back, &[1, d, len])?);
    }
    let refs: Vec<&Tensor> = nodes.iter().collect();
    tape.concat(&refs, 0)
}

/// Full encoder: embedding (+ feature dropout at train time), the spatial
/// attention stack applied per time step with that step's adjacency, then
/// the optional temporal block.
pub fn encode(
    tape: &mut Tape,
    x_hist: &Tensor,
    a_hist: &Tensor,
    params: &ModelParameters,
    config: &ModelConfig,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    encode_traced(tape, x_hist, a_hist, params, config, train, rng, &mut None)
}

#[allow(clippy::too_many_arguments)]
pub fn encode_traced(
    tape: &mut Tape,
    x_hist: &Tensor,
    a_hist: &Tensor,
    params: &ModelParameters,
    config: &ModelConfig,
    train: bool,
    rng: &mut ChaCha8Rng,
    trace: &mut Option<&mut AttentionTrace>,
) -> Result<Tensor> {
    let (n, _, len) = expect_rank3("encode", x_hist)?;
    let (an, am, alen) = expect_rank3("encode", a_hist)?;
    if an != n || am != n || alen != len {
        return Err(DynastyError::dim(
            "encode",
            format!(
                "adjacency history {:?} does not match feature history {:?}",
                a_hist.shape(),
                x_hist.shape()
            ),
        ));
    }

    let embedded = embed_inputs(tape, x_hist, params, config)?;
    let z = if train {
        tape.dropout(&embedded, config.feature_dropout_rate, true, rng)?
    } else {
        embedded
    };

    let d = config.hidden_dim;
    let mut steps = Vec::with_capacity(len);
    for t in 0..len {
        let zt3 = tape.slice(&z, 2, t, t + 1)?;
        let mut zt = tape.reshape(&zt3, &[n, d])?;
        let at3 = tape.slice(a_hist, 2, t, t + 1)?;
        let at = tape.reshape(&at3, &[n, n])?;
        for layer in &params.layers {
            zt = spatial_attention_layer_traced(tape, &zt, &at, layer, config, train, rng, trace)?;
        }
        steps.push(tape.reshape(&zt, &[n, d, 1])?);
    }
    let refs: Vec<&Tensor> = steps.iter().collect();
    let z_enc = tape.concat(&refs, 2)?;

    if config.temporal_attention {
        temporal_self_attention_traced(tape, &z_enc, params, config, trace)
    } else {
        Ok(z_enc)
    }
}

fn gru_cell(tape: &mut Tape, x: &Tensor, h: &Tensor, gru: &GruParams) -> Result<Tensor> {
    let one = Tensor::scalar(1.0);

    let xz = tape.linear(x, &gru.w_update, &gru.b_update)?;
    let hz = tape.matmul(h, &gru.u_update)?;
    let z_pre = tape.add(&xz, &hz)?;
    let z = tape.sigmoid(&z_pre)?;

    let xr = tape.linear(x, &gru.w_reset, &gru.b_reset)?;
    let hr = tape.matmul(h, &gru.u_reset)?;
    let r_pre = tape.add(&xr, &hr)?;
    let r = tape.sigmoid(&r_pre)?;

    let rh = tape.mul(&r, h)?;
    let xc = tape.linear(x, &gru.w_cand, &gru.b_cand)?;
    let hc = tape.matmul(&rh, &gru.u_cand)?;
    let c_pre = tape.add(&xc, &hc)?;
    let cand = tape.tanh(&c_pre)?;

    let keep = tape.mul(&z, h)?;
    let omz = tape.sub(&one, &z)?;
    let new = tape.mul(&omz, &cand)?;
    tape.add(&new, &keep)
}

/// Run the encoder GRU over the encoded history, per node, from a zero
/// initial state; returns the final hidden state `h0` ([N, d]).
pub fn summarize_history(
    tape: &mut Tape,
    z_enc: &Tensor,
    params: &ModelParameters,
) -> Result<Tensor> {
    let (n, d, len) = expect_rank3("summarize_history", z_enc)?;
    let mut h = Tensor::zeros(&[n, d]);
    for t in 0..len {
        let zt3 = tape.slice(z_enc, 2, t, t + 1)?;
        let zt = tape.reshape(&zt3, &[n, d])?;
        h = gru_cell(tape, &zt, &h, &params.encoder_gru)?;
    }
    Ok(h)
}

/// One decoder step: project the raw-feature input through the shared D→d
/// projection, advance the decoder GRU, and map the new hidden state to
/// features through the forecast head.
pub fn decode_step(
    tape: &mut Tape,
    h_prev: &Tensor,
    x_in: &Tensor,
    params: &ModelParameters,
) -> Result<(Tensor, Tensor)> {
    let projected = tape.linear(x_in, &params.input_w, &params.input_b)?;
    let h = gru_cell(tape, &projected, h_prev, &params.decoder_gru)?;
    let y = mlp_head(tape, &h, &params.forecast_head)?;
    Ok((y, h))
}

fn check_targets(targets: &Tensor, n: usize, feat: usize, horizon: usize) -> Result<()> {
    if targets.shape() != [n, feat, horizon] {
        return Err(DynastyError::Contract(format!(
            "forecast targets must have shape [{n}, {feat}, {horizon}], got {:?}",
            targets.shape()
        )));
    }
    Ok(())
}

/// Autoregressive rollout over the configured horizon. The first decoder
/// input is the last observed frame; later inputs follow `mode`.
#[allow(clippy::too_many_arguments)]
pub fn forecast(
    tape: &mut Tape,
    x_hist: &Tensor,
    a_hist: &Tensor,
    params: &ModelParameters,
    config: &ModelConfig,
    mode: &ForecastMode,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    forecast_traced(tape, x_hist, a_hist, params, config, mode, train, rng, &mut None)
}

#[allow(clippy::too_many_arguments)]
pub fn forecast_traced(
    tape: &mut Tape,
    x_hist: &Tensor,
    a_hist: &Tensor,
    params: &ModelParameters,
    config: &ModelConfig,
    mode: &ForecastMode,
    train: bool,
    rng: &mut ChaCha8Rng,
    trace: &mut Option<&mut AttentionTrace>,
) -> Result<Tensor> {
    let (n, feat, len) = expect_rank3("forecast", x_hist)?;
    let horizon = config.horizon;
    match mode {
        ForecastMode::FreeRunning => {}
        ForecastMode::TeacherForced { targets } | ForecastMode::Scheduled { targets, .. } => {
            check_targets(targets, n, feat, horizon)?;
        }
    }

    let z_enc = encode_traced(tape, x_hist, a_hist, params, config, train, rng, trace)?;
    let mut h = summarize_history(tape, &z_enc, params)?;

    let last3 = tape.slice(x_hist, 2, len - 1, len)?;
    let mut x = tape.reshape(&last3, &[n, feat])?;

    let mut outputs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (y, h_new) = decode_step(tape, &h, &x, params)?;
        h = h_new;
        outputs.push(tape.reshape(&y, &[n, feat, 1])?);
        if t + 1 == horizon {
            break;
        }
        x = match mode {
            ForecastMode::FreeRunning => y,
            ForecastMode::TeacherForced { targets } => {
                let yt3 = tape.slice(targets, 2, t, t + 1)?;
                tape.reshape(&yt3, &[n, feat])?
            }
            ForecastMode::Scheduled { targets, prob, mix_alpha } => {
                // one coin per rollout step
                let use_truth = rng.gen::<f64>() < *prob;
                if use_truth {
                    let yt3 = tape.slice(targets, 2, t, t + 1)?;
                    let truth = tape.reshape(&yt3, &[n, feat])?;
                    let wt = tape.scalar_mul(&truth, *mix_alpha)?;
                    let wp = tape.scalar_mul(&y, 1.0 - *mix_alpha)?;
                    tape.add(&wt, &wp)?
                } else {
                    y
                }
            }
        };
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    tape.concat(&refs, 2)
}

/// Encode (evaluation mode, no dropout) and map every step's activation
/// through the reconstruction head; no autoregression.
pub fn reconstruct(
    tape: &mut Tape,
    x_masked: &Tensor,
    a_hist: &Tensor,
    params: &ModelParameters,
    config: &ModelConfig,
) -> Result<Tensor> {
    let (n, feat, len) = expect_rank3("reconstruct", x_masked)?;
    // dropout is off: the rng is never consulted
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z_enc = encode(tape, x_masked, a_hist, params, config, false, &mut rng)?;
    let head = params.reconstruction_head();
    let d = config.hidden_dim;
    let mut steps = Vec::with_capacity(len);
    for t in 0..len {
        let zt3 = tape.slice(&z_enc, 2, t, t + 1)?;
        let zt = tape.reshape(&zt3, &[n, d])?;
        let xt = mlp_head(tape, &zt, head)?;
        steps.push(tape.reshape(&xt, &[n, feat, 1])?);
    }
    let refs: Vec<&Tensor> = steps.iter().collect();
    tape.concat(&refs, 2)
}
