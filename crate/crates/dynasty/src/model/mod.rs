//! The forecasting architecture: input projection with learned temporal
//! positional encodings, stacked edge-biased spatial attention layers,
//! optional per-node temporal self-attention, a GRU history summarizer,
//! and an autoregressive GRU decoder with forecast/reconstruction heads.

mod checkpoint;
mod forward;


pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    decode_step, edge_bias, embed_inputs, encode, encode_traced, forecast, forecast_traced,
    reconstruct, spatial_attention_layer, summarize_history, temporal_self_attention,
    AttentionTrace,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DynastyError, Result};
use crate::tensor::Tensor;

fn default_hidden_dim() -> usize {
    48
}
fn default_num_heads() -> usize {
    4
}
fn default_num_layers() -> usize {
    4
}
fn default_dropout() -> f64 {
    0.1
}
fn default_bias_mlp_hidden() -> usize {
    64
}
fn default_bias_mlp_layers() -> usize {
    2
}
fn default_true() -> bool {
    true
}

/// Architecture hyperparameters. Parameter count is a pure function of this
/// struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// D: per-node feature dimension.
    pub feature_dim: usize,
    /// d: hidden width; must be divisible by `num_heads`.
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_num_heads")]
    pub num_heads: usize,
    #[serde(default = "default_num_layers")]
    pub num_layers: usize,
    /// L: input history length; also sizes the positional-encoding table.
    pub history_len: usize,
    /// H: forecast horizon.
    pub horizon: usize,
    /// Probability of zeroing an adjacency entry before the bias MLP
    /// (training only).
    #[serde(default = "default_dropout")]
    pub edge_dropout_rate: f64,
    /// Inverted dropout on the embedded inputs (training only).
    #[serde(default = "default_dropout")]
    pub feature_dropout_rate: f64,
    /// Enable the per-node temporal self-attention block between the
    /// spatial stack and the GRU summarizer.
    #[serde(default)]
    pub temporal_attention: bool,
    #[serde(default = "default_bias_mlp_hidden")]
    pub bias_mlp_hidden: usize,
    /// Number of affine maps in the edge-bias MLP (2 = one hidden layer).
    #[serde(default = "default_bias_mlp_layers")]
    pub bias_mlp_layers: usize,
    /// Share the forecast head for reconstruction (true) or learn a
    /// separate, architecturally identical head (false).
    #[serde(default = "default_true")]
    pub tie_reconstruction_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 1,
            hidden_dim: default_hidden_dim(),
            num_heads: default_num_heads(),
            num_layers: default_num_layers(),
            history_len: 12,
            horizon: 8,
            edge_dropout_rate: default_dropout(),
            feature_dropout_rate: default_dropout(),
            temporal_attention: false,
            bias_mlp_hidden: default_bias_mlp_hidden(),
            bias_mlp_layers: default_bias_mlp_layers(),
            tie_reconstruction_head: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0
            || self.hidden_dim == 0
            || self.num_heads == 0
            || self.history_len == 0
            || self.horizon == 0
            || self.bias_mlp_hidden == 0
            || self.bias_mlp_layers == 0
        {
            return Err(DynastyError::Config("model dimensions must be positive".into()));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(DynastyError::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        for (name, rate) in [
            ("edge_dropout_rate", self.edge_dropout_rate),
            ("feature_dropout_rate", self.feature_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(DynastyError::Config(format!("{name} {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// How the decoder picks its input at each rollout step.
#[derive(Debug, Clone)]
pub enum ForecastMode<'a> {
    /// Feed back the model's own previous prediction.
    FreeRunning,
    /// Feed the ground-truth previous frame.
    TeacherForced { targets: &'a Tensor },
    /// Per step, with probability `prob` feed
    /// `mix_alpha * truth + (1 - mix_alpha) * prediction`, otherwise the
    /// prediction alone.
    Scheduled { targets: &'a Tensor, prob: f64, mix_alpha: f64 },
}

#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_update: Tensor,
    pub u_update: Tensor,
    pub b_update: Tensor,
    pub w_reset: Tensor,
    pub u_reset: Tensor,
    pub b_reset: Tensor,
    pub w_cand: Tensor,
    pub u_cand: Tensor,
    pub b_cand: Tensor,
}

/// Two-layer MLP head with a ReLU hidden layer.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Per-entry scalar-to-heads MLP producing one attention bias per head.
/// Hidden layers use ReLU; the output layer is linear.
#[derive(Debug, Clone)]
pub struct BiasMlp {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl BiasMlp {
    /// Zero the final affine map, making the bias identically zero and the
    /// model blind to adjacency input.
    pub fn zero_output_layer(&self) {
        if let Some((w, b)) = self.layers.last() {
            w.update_values(|v| v.fill(0.0));
            b.update_values(|v| v.fill(0.0));
        }
    }
}

/// Attention projections. Q/K/V are bias-free: a key bias shifts every
/// logit in a row equally and a value bias is absorbed by the output bias,
/// so neither could ever learn anything.
#[derive(Debug, Clone)]
pub struct AttentionProj {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub attn: AttentionProj,
    pub edge_bias: BiasMlp,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_offset: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_offset: Tensor,
}

#[derive(Debug, Clone)]
pub struct TemporalParams {
    pub attn: AttentionProj,
    pub ln_gain: Tensor,
    pub ln_offset: Tensor,
}

/// Every learnable tensor of the model. All tensors require gradients.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    /// D→d input projection, shared by the encoder embedding and the
    /// decoder input (weight tying).
    pub input_w: Tensor,
    pub input_b: Tensor,
    /// Learned temporal positional encodings, one row per history step.
    pub pe_time: Tensor,
    pub layers: Vec<LayerParams>,
    pub temporal: Option<TemporalParams>,
    pub encoder_gru: GruParams,
    pub decoder_gru: GruParams,
    /// d→d→D forecast head.
    pub forecast_head: MlpHead,
    /// Separate reconstruction head; `None` when tied to the forecast head.
    pub recon_head: Option<MlpHead>,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// Projection weights and biases: uniform in ±1/√fan_in.
    fn proj(&mut self, fan_in: usize, fan_out: usize) -> (Tensor, Tensor) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> =
            (0..fan_in * fan_out).map(|_| self.rng.gen_range(-bound..bound)).collect();
        let b: Vec<f64> = (0..fan_out).map(|_| self.rng.gen_range(-bound..bound)).collect();
        (
            Tensor::parameter(&[fan_in, fan_out], w).expect("consistent"),
            Tensor::parameter(&[fan_out], b).expect("consistent"),
        )
    }

    fn standard_normal(&mut self) -> f64 {
        // Box-Muller transform
        let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = self.rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn weight(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> =
            (0..fan_in * fan_out).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::parameter(&[fan_in, fan_out], w).expect("consistent")
    }

    fn attention(&mut self, d: usize) -> AttentionProj {
        let wq = self.weight(d, d);
        let wk = self.weight(d, d);
        let wv = self.weight(d, d);
        let (wo, bo) = self.proj(d, d);
        AttentionProj { wq, wk, wv, wo, bo }
    }

    fn gru(&mut self, d: usize) -> GruParams {
        let (w_update, b_update) = self.proj(d, d);
        let (u_update, _) = self.proj(d, d);
        let (w_reset, b_reset) = self.proj(d, d);
        let (u_reset, _) = self.proj(d, d);
        let (w_cand, b_cand) = self.proj(d, d);
        let (u_cand, _) = self.proj(d, d);
        GruParams {
            w_update,
            u_update,
            b_update,
            w_reset,
            u_reset,
            b_reset,
            w_cand,
            u_cand,
            b_cand,
        }
    }

    fn head(&mut self, d: usize, out: usize) -> MlpHead {
        let (w1, b1) = self.proj(d, d);
        let (w2, b2) = self.proj(d, out);
        MlpHead { w1, b1, w2, b2 }
    }

    fn ones(n: usize) -> Tensor {
        Tensor::parameter(&[n], vec![1.0; n]).expect("consistent")
    }

    fn zeros_param(n: usize) -> Tensor {
        Tensor::parameter(&[n], vec![0.0; n]).expect("consistent")
    }
}

impl ModelParameters {
    /// Fresh parameters drawn from the documented initialization scheme:
    /// projections uniform in ±1/√fan_in, positional encodings standard
    /// normal scaled by 0.02, layer-norm gains 1 and offsets 0.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };

        let (input_w, input_b) = init.proj(config.feature_dim, d);
        let pe: Vec<f64> =
            (0..config.history_len * d).map(|_| 0.02 * init.standard_normal()).collect();
        let pe_time = Tensor::parameter(&[config.history_len, d], pe)?;

        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let attn = init.attention(d);
            let mut mlp_layers = Vec::with_capacity(config.bias_mlp_layers);
            let mut fan_in = 1;
            for li in 0..config.bias_mlp_layers {
                let fan_out = if li + 1 == config.bias_mlp_layers {
                    config.num_heads
                } else {
                    config.bias_mlp_hidden
                };
                mlp_layers.push(init.proj(fan_in, fan_out));
                fan_in = fan_out;
            }
            let (ffn_w1, ffn_b1) = init.proj(d, 4 * d);
            let (ffn_w2, ffn_b2) = init.proj(4 * d, d);
            layers.push(LayerParams {
                attn,
                edge_bias: BiasMlp { layers: mlp_layers },
                ffn_w1,
                ffn_b1,
                ffn_w2,
                ffn_b2,
                ln1_gain: Init::ones(d),
                ln1_offset: Init::zeros_param(d),
                ln2_gain: Init::ones(d),
                ln2_offset: Init::zeros_param(d),
            });
        }

        let temporal = config.temporal_attention.then(|| TemporalParams {
            attn: init.attention(d),
            ln_gain: Init::ones(d),
            ln_offset: Init::zeros_param(d),
        });

        let encoder_gru = init.gru(d);
        let decoder_gru = init.gru(d);
        let forecast_head = init.head(d, config.feature_dim);
        let recon_head = (!config.tie_reconstruction_head).then(|| init.head(d, config.feature_dim));

        Ok(ModelParameters {
            input_w,
            input_b,
            pe_time,
            layers,
            temporal,
            encoder_gru,
            decoder_gru,
            forecast_head,
            recon_head,
        })
    }

    /// The head used for reconstruction: the dedicated one when untied,
    /// otherwise the forecast head itself.
    pub fn reconstruction_head(&self) -> &MlpHead {
        self.recon_head.as_ref().unwrap_or(&self.forecast_head)
    }

    /// All parameters as stable (name, tensor) pairs. The order is the
    /// initialization draw order and defines checkpoint layout.
    pub fn param_set(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = Vec::new();
        let mut push = |name: String, t: &Tensor| out.push((name, t.clone()));

        push("input.w".into(), &self.input_w);
        push("input.b".into(), &self.input_b);
        push("pe_time".into(), &self.pe_time);
        for (i, l) in self.layers.iter().enumerate() {
            for (tag, t) in [
                ("attn.wq", &l.attn.wq),
                ("attn.wk", &l.attn.wk),
                ("attn.wv", &l.attn.wv),
                ("attn.wo", &l.attn.wo),
                ("attn.bo", &l.attn.bo),
            ] {
                push(format!("layer{i}.{tag}"), t);
            }
            for (j, (w, b)) in l.edge_bias.layers.iter().enumerate() {
                push(format!("layer{i}.edge_bias{j}.w"), w);
                push(format!("layer{i}.edge_bias{j}.b"), b);
            }
            for (tag, t) in [
                ("ffn.w1", &l.ffn_w1),
                ("ffn.b1", &l.ffn_b1),
                ("ffn.w2", &l.ffn_w2),
                ("ffn.b2", &l.ffn_b2),
                ("ln1.gain", &l.ln1_gain),
                ("ln1.offset", &l.ln1_offset),
                ("ln2.gain", &l.ln2_gain),
                ("ln2.offset", &l.ln2_offset),
            ] {
                push(format!("layer{i}.{tag}"), t);
            }
        }
        if let Some(t) = &self.temporal {
            for (tag, tensor) in [
                ("attn.wq", &t.attn.wq),
                ("attn.wk", &t.attn.wk),
                ("attn.wv", &t.attn.wv),
                ("attn.wo", &t.attn.wo),
                ("attn.bo", &t.attn.bo),
                ("ln.gain", &t.ln_gain),
                ("ln.offset", &t.ln_offset),
            ] {
                push(format!("temporal.{tag}"), tensor);
            }
        }
        for (prefix, g) in [("encoder_gru", &self.encoder_gru), ("decoder_gru", &self.decoder_gru)]
        {
            for (tag, t) in [
                ("w_update", &g.w_update),
                ("u_update", &g.u_update),
                ("b_update", &g.b_update),
                ("w_reset", &g.w_reset),
                ("u_reset", &g.u_reset),
                ("b_reset", &g.b_reset),
                ("w_cand", &g.w_cand),
                ("u_cand", &g.u_cand),
                ("b_cand", &g.b_cand),
            ] {
                push(format!("{prefix}.{tag}"), t);
            }
        }
        for (tag, t) in [
            ("w1", &self.forecast_head.w1),
            ("b1", &self.forecast_head.b1),
            ("w2", &self.forecast_head.w2),
            ("b2", &self.forecast_head.b2),
        ] {
            push(format!("forecast_head.{tag}"), t);
        }
        if let Some(h) = &self.recon_head {
            for (tag, t) in [("w1", &h.w1), ("b1", &h.b1), ("w2", &h.w2), ("b2", &h.b2)] {
                push(format!("recon_head.{tag}"), t);
            }
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.param_set().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.param_set() {
            t.zero_grad();
        }
    }

    /// Copy of every parameter's values, in `param_set` order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.param_set().iter().map(|(_, t)| t.values_vec()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) {
        let params = self.param_set();
        assert_eq!(params.len(), snapshot.len(), "snapshot does not match parameter set");
        for ((_, t), vals) in params.iter().zip(snapshot) {
            t.update_values(|v| v.copy_from_slice(vals));
        }
    }

    /// Zero every layer's edge-bias output map; paired with optimizer
    /// exclusion this severs the model's dependence on adjacency input.
    pub fn zero_edge_bias_outputs(&self) {
        for l in &self.layers {
            l.edge_bias.zero_output_layer();
        }
    }

    /// Parameter names belonging to edge-bias output layers.
    pub fn edge_bias_output_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let j = l.edge_bias.layers.len() - 1;
            names.push(format!("layer{i}.edge_bias{j}.w"));
            names.push(format!("layer{i}.edge_bias{j}.b"));
        }
        names
    }
}
