//! The recording tape: forward op execution plus reverse-mode replay.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::Tensor;
use crate::error::{DynastyError, Result};

/// Every operation kind the substrate supports.
///
/// `Recip` (elementwise reciprocal) backs the divisions inside layer
/// normalization; everything else is composed from the kinds below.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    ScalarMul,
    Concat,
    Slice,
    Reshape,
    Transpose,
    SoftmaxAxis,
    Sigmoid,
    Tanh,
    Relu,
    Dropout,
    SumAxis,
    MeanAxis,
    Abs,
    Square,
    Sqrt,
    MaxWithScalar,
    Recip,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::ScalarMul,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::SoftmaxAxis,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Relu,
        OpKind::Dropout,
        OpKind::SumAxis,
        OpKind::MeanAxis,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Sqrt,
        OpKind::MaxWithScalar,
        OpKind::Recip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise-mul",
            OpKind::ScalarMul => "scalar-mul",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Reshape => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::SoftmaxAxis => "softmax-over-axis",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Dropout => "dropout",
            OpKind::SumAxis => "sum-over-axis",
            OpKind::MeanAxis => "mean-over-axis",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::MaxWithScalar => "maximum-with-scalar",
            OpKind::Recip => "recip",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = DynastyError;

    fn from_str(s: &str) -> Result<OpKind> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| DynastyError::Config(format!("unknown op kind `{s}`")))
    }
}

/// Attributes for [`Tape::apply`]. Ops ignore attributes they do not use.
#[derive(Debug, Clone, Default)]
pub struct OpAttrs {
    pub axis: Option<usize>,
    pub scalar: Option<f64>,
    pub shape: Option<Vec<usize>>,
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub rate: Option<f64>,
    pub train: Option<bool>,
    /// Seeds the dropout mask when applying through the generic entry point.
    pub seed: Option<u64>,
}

type BackFn = Box<dyn FnOnce() -> Result<()>>;

struct Node {
    back: BackFn,
}

/// Records ops during a forward pass; replays them in reverse on
/// [`Tape::backward`]. One tape per forward pass, one worker per tape.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Recording tape for a differentiated forward pass.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recording: true }
    }

    /// Non-recording tape for evaluation-only forward passes.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_ops(&self) -> usize {
        self.nodes.len()
    }

    fn track(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    fn push(&mut self, back: impl FnOnce() -> Result<()> + 'static) {
        self.nodes.push(Node { back: Box::new(back) });
    }

    fn finish(&self, op: OpKind, shape: Vec<usize>, values: Vec<f64>, track: bool) -> Result<Tensor> {
        if !kernels::all_finite(&values) {
            return Err(DynastyError::NonFinite { op: op.name().into() });
        }
        Ok(Tensor::output(shape, values, track))
    }

    /// Propagate `∂loss/∂t` into every gradient-tracked tensor reachable from
    /// the recorded ops, then clear the tape. Gradients accumulate additively
    /// across multiple uses of a tensor and across repeated backward calls.
    pub fn backward(&mut self, loss: &Tensor) -> Result<()> {
        let nodes = std::mem::take(&mut self.nodes);
        if loss.len() != 1 {
            return Err(DynastyError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if nodes.is_empty() {
            return Err(DynastyError::Contract("backward on an empty tape".into()));
        }
        loss.seed_grad_one();
        for node in nodes.into_iter().rev() {
            (node.back)()?;
        }
        Ok(())
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(DynastyError::dim(
                "matmul",
                format!("incompatible shapes {ash:?} and {bsh:?}"),
            ));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let values = kernels::matmul(&a.values(), &b.values(), m, k, n);
        let track = self.track(&[a, b]);
        let out = self.finish(OpKind::MatMul, vec![m, n], values, track)?;
        if track {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                if a.requires_grad() {
                    let da = kernels::matmul_nt(&g, &b.values(), m, n, k);
                    a.accumulate_grad(&da)?;
                }
                if b.requires_grad() {
                    let db = kernels::matmul_tn(&a.values(), &g, k, m, n);
                    b.accumulate_grad(&db)?;
                }
                Ok(())
            });
        }
        Ok(out)
    }

    pub fn transpose(&mut self, x: &Tensor) -> Result<Tensor> {
        let sh = x.shape();
        if sh.len() != 2 {
            return Err(DynastyError::dim(
                "transpose",
                format!("expected a rank-2 tensor, got shape {sh:?}"),
            ));
        }
        let (r, c) = (sh[0], sh[1]);
        let values = kernels::transpose2d(&x.values(), r, c);
        let track = self.track(&[x]);
        let out = self.finish(OpKind::Transpose, vec![c, r], values, track)?;
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                x.accumulate_grad(&kernels::transpose2d(&g, c, r))
            });
        }
        Ok(out)
    }

    // ── Elementwise binary (leading-axes broadcast) ─────────────────

    fn binary(&mut self, op: OpKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out_shape = kernels::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
            DynastyError::dim(
                op.name(),
                format!("shapes {:?} and {:?} do not broadcast", a.shape(), b.shape()),
            )
        })?;
        let out_len: usize = out_shape.iter().product();
        let (al, bl) = (a.len(), b.len());
        let values: Vec<f64> = {
            let (av, bv) = (a.values(), b.values());
            let f = |x: f64, y: f64| match op {
                OpKind::Add => x + y,
                OpKind::Sub => x - y,
                OpKind::Mul => x * y,
                _ => unreachable!(),
            };
            (0..out_len).map(|i| f(av[i % al], bv[i % bl])).collect()
        };
        let track = self.track(&[a, b]);
        let out = self.finish(op, out_shape, values, track)?;
        if track {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                if a.requires_grad() {
                    let mut da = vec![0.0; al];
                    match op {
                        OpKind::Add | OpKind::Sub => {
                            for (i, gi) in g.iter().enumerate() {
                                da[i % al] += gi;
                            }
                        }
                        OpKind::Mul => {
                            let bv = b.values();
                            for (i, gi) in g.iter().enumerate() {
                                da[i % al] += gi * bv[i % bl];
                            }
                        }
                        _ => unreachable!(),
                    }
                    a.accumulate_grad(&da)?;
                }
                if b.requires_grad() {
                    let mut db = vec![0.0; bl];
                    match op {
                        OpKind::Add => {
                            for (i, gi) in g.iter().enumerate() {
                                db[i % bl] += gi;
                            }
                        }
                        OpKind::Sub => {
                            for (i, gi) in g.iter().enumerate() {
                                db[i % bl] -= gi;
                            }
                        }
                        OpKind::Mul => {
                            let av = a.values();
                            for (i, gi) in g.iter().enumerate() {
                                db[i % bl] += gi * av[i % al];
                            }
                        }
                        _ => unreachable!(),
                    }
                    b.accumulate_grad(&db)?;
                }
                Ok(())
            });
        }
        Ok(out)
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(OpKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(OpKind::Mul, a, b)
    }

    pub fn scalar_mul(&mut self, x: &Tensor, c: f64) -> Result<Tensor> {
        let values = x.values().iter().map(|v| v * c).collect();
        let track = self.track(&[x]);
        let out = self.finish(OpKind::ScalarMul, x.shape().to_vec(), values, track)?;
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                x.accumulate_grad(&dx)
            });
        }
        Ok(out)
    }

    // ── Elementwise unary ───────────────────────────────────────────

    /// `dfac(x_i, y_i)` is the local derivative dy_i/dx_i.
    fn unary(
        &mut self,
        op: OpKind,
        x: &Tensor,
        fwd: impl Fn(f64) -> f64,
        dfac: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let values: Vec<f64> = x.values().iter().map(|&v| fwd(v)).collect();
        let track = self.track(&[x]);
        let out = self.finish(op, x.shape().to_vec(), values, track)?;
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                let dx: Vec<f64> = {
                    let (xv, yv) = (x.values(), o.values());
                    g.iter().zip(xv.iter().zip(yv.iter())).map(|(gi, (&xi, &yi))| gi * dfac(xi, yi)).collect()
                };
                x.accumulate_grad(&dx)
            });
        }
        Ok(out)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(OpKind::Sigmoid, x, |v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(OpKind::Tanh, x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(OpKind::Relu, x, |v| v.max(0.0), |xi, _| if xi > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn abs(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(OpKind::Abs, x, f64::abs, |xi, _| {
            if xi > 0.0 {
                1.0
            } else if xi < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(OpKind::Square, x, |v| v * v, |xi, _| 2.0 * xi)
    }

    pub fn sqrt(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(OpKind::Sqrt, x, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn recip(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(OpKind::Recip, x, |v| 1.0 / v, |_, y| -y * y)
    }

    pub fn max_scalar(&mut self, x: &Tensor, c: f64) -> Result<Tensor> {
        self.unary(OpKind::MaxWithScalar, x, move |v| v.max(c), move |xi, _| {
            if xi > c {
                1.0
            } else {
                0.0
            }
        })
    }

    // ── Shape ops ───────────────────────────────────────────────────

    pub fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != x.len() {
            return Err(DynastyError::dim(
                "reshape",
                format!("cannot reshape {:?} ({} values) to {:?}", x.shape(), x.len(), shape),
            ));
        }
        let track = self.track(&[x]);
        let out = self.finish(OpKind::Reshape, shape.to_vec(), x.values_vec(), track)?;
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                x.accumulate_grad(&g)
            });
        }
        Ok(out)
    }

    pub fn slice(&mut self, x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let sh = x.shape().to_vec();
        if axis >= sh.len() || start >= end || end > sh[axis] {
            return Err(DynastyError::dim(
                "slice",
                format!("range {start}..{end} on axis {axis} of shape {sh:?}"),
            ));
        }
        let values = kernels::slice_axis(&x.values(), &sh, axis, start, end);
        let mut out_shape = sh.clone();
        out_shape[axis] = end - start;
        let track = self.track(&[x]);
        let out = self.finish(OpKind::Slice, out_shape, values, track)?;
        if track {
            let (x, o) = (x.clone(), out.clone());
            let span = end - start;
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                let mut dx = vec![0.0; x.len()];
                kernels::slice_backward_into(&mut dx, &g, &sh, axis, start, span);
                x.accumulate_grad(&dx)
            });
        }
        Ok(out)
    }

    pub fn concat(&mut self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(DynastyError::Contract("concat requires at least one input".into()));
        }
        let first = parts[0].shape().to_vec();
        if axis >= first.len() {
            return Err(DynastyError::dim("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut axis_total = 0;
        for p in parts {
            let sh = p.shape();
            let compatible = sh.len() == first.len()
                && sh.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(DynastyError::dim(
                    "concat",
                    format!("shapes {:?} and {:?} differ off axis {axis}", first, sh),
                ));
            }
            axis_total += sh[axis];
        }
        let (outer, _, inner) = kernels::axis_geometry(&first, axis);
        let values = {
            let borrows: Vec<_> = parts.iter().map(|p| p.values()).collect();
            let views: Vec<(&[f64], usize)> =
                borrows.iter().zip(parts).map(|(b, p)| (&**b, p.shape()[axis])).collect();
            kernels::concat_axis(&views, outer, inner)
        };
        let mut out_shape = first;
        out_shape[axis] = axis_total;
        let track = self.track(parts);
        let out = self.finish(OpKind::Concat, out_shape.clone(), values, track)?;
        if track {
            let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
            let o = out.clone();
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                let mut offset = 0;
                for p in &owned {
                    let span = p.shape()[axis];
                    if p.requires_grad() {
                        let dp = kernels::slice_axis(&g, &out_shape, axis, offset, offset + span);
                        p.accumulate_grad(&dp)?;
                    }
                    offset += span;
                }
                Ok(())
            });
        }
        Ok(out)
    }

    // ── Reductions and softmax ──────────────────────────────────────

    fn reduce(&mut self, op: OpKind, x: &Tensor, axis: usize) -> Result<Tensor> {
        let sh = x.shape().to_vec();
        if axis >= sh.len() {
            return Err(DynastyError::dim(op.name(), format!("axis {axis} out of range for {sh:?}")));
        }
        let scale = match op {
            OpKind::SumAxis => 1.0,
            OpKind::MeanAxis => 1.0 / sh[axis] as f64,
            _ => unreachable!(),
        };
        let mut values = kernels::reduce_axis_sum(&x.values(), &sh, axis);
        if scale != 1.0 {
            for v in &mut values {
                *v *= scale;
            }
        }
        let mut out_shape = sh.clone();
        out_shape.remove(axis);
        let track = self.track(&[x]);
        let out = self.finish(op, out_shape, values, track)?;
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                x.accumulate_grad(&kernels::spread_axis(&g, &sh, axis, scale))
            });
        }
        Ok(out)
    }

    pub fn sum_axis(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.reduce(OpKind::SumAxis, x, axis)
    }

    pub fn mean_axis(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.reduce(OpKind::MeanAxis, x, axis)
    }

    pub fn softmax(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        let sh = x.shape().to_vec();
        if axis >= sh.len() {
            return Err(DynastyError::dim("softmax-over-axis", format!("axis {axis} out of range for {sh:?}")));
        }
        let values = kernels::softmax_axis(&x.values(), &sh, axis);
        let track = self.track(&[x]);
        let out = self.finish(OpKind::SoftmaxAxis, sh.clone(), values, track)?;
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                let dx = kernels::softmax_backward_axis(&o.values(), &g, &sh, axis);
                x.accumulate_grad(&dx)
            });
        }
        Ok(out)
    }

    // ── Dropout ─────────────────────────────────────────────────────

    /// Inverted dropout: at train time each element is zeroed with
    /// probability `rate` and survivors scale by 1/(1-rate); identity when
    /// `train` is false.
    pub fn dropout(
        &mut self,
        x: &Tensor,
        rate: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DynastyError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> =
            (0..x.len()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep }).collect();
        let values: Vec<f64> = x.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let track = self.track(&[x]);
        let out = self.finish(OpKind::Dropout, x.shape().to_vec(), values, track)?;
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.push(move || {
                let Some(g) = o.grad() else { return Ok(()) };
                let dx: Vec<f64> = g.iter().zip(&mask).map(|(gi, m)| gi * m).collect();
                x.accumulate_grad(&dx)
            });
        }
        Ok(out)
    }

    // ── Generic entry point ─────────────────────────────────────────

    /// Dispatch an op by kind. Shape mismatches surface as dimension errors
    /// naming the kind and offending shapes; missing attributes surface as
    /// configuration errors.
    pub fn apply(&mut self, kind: OpKind, inputs: &[&Tensor], attrs: &OpAttrs) -> Result<Tensor> {
        let need = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(DynastyError::Contract(format!(
                    "{} expects {} input(s), got {}",
                    kind.name(),
                    n,
                    inputs.len()
                )))
            }
        };
        let attr_axis = || {
            attrs.axis.ok_or_else(|| DynastyError::Config(format!("{} requires `axis`", kind.name())))
        };
        let attr_scalar = || {
            attrs
                .scalar
                .ok_or_else(|| DynastyError::Config(format!("{} requires `scalar`", kind.name())))
        };
        match kind {
            OpKind::MatMul => {
                need(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                need(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                need(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                need(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::ScalarMul => {
                need(1)?;
                self.scalar_mul(inputs[0], attr_scalar()?)
            }
            OpKind::Concat => self.concat(inputs, attr_axis()?),
            OpKind::Slice => {
                need(1)?;
                let start = attrs
                    .start
                    .ok_or_else(|| DynastyError::Config("slice requires `start`".into()))?;
                let end =
                    attrs.end.ok_or_else(|| DynastyError::Config("slice requires `end`".into()))?;
                self.slice(inputs[0], attr_axis()?, start, end)
            }
            OpKind::Reshape => {
                need(1)?;
                let shape = attrs
                    .shape
                    .as_deref()
                    .ok_or_else(|| DynastyError::Config("reshape requires `shape`".into()))?;
                self.reshape(inputs[0], shape)
            }
            OpKind::Transpose => {
                need(1)?;
                self.transpose(inputs[0])
            }
            OpKind::SoftmaxAxis => {
                need(1)?;
                self.softmax(inputs[0], attr_axis()?)
            }
            OpKind::Sigmoid => {
                need(1)?;
                self.sigmoid(inputs[0])
            }
            OpKind::Tanh => {
                need(1)?;
                self.tanh(inputs[0])
            }
            OpKind::Relu => {
                need(1)?;
                self.relu(inputs[0])
            }
            OpKind::Dropout => {
                need(1)?;
                let rate = attrs
                    .rate
                    .ok_or_else(|| DynastyError::Config("dropout requires `rate`".into()))?;
                let train = attrs.train.unwrap_or(false);
                let mut rng = ChaCha8Rng::seed_from_u64(attrs.seed.unwrap_or(0));
                self.dropout(inputs[0], rate, train, &mut rng)
            }
            OpKind::SumAxis => {
                need(1)?;
                self.sum_axis(inputs[0], attr_axis()?)
            }
            OpKind::MeanAxis => {
                need(1)?;
                self.mean_axis(inputs[0], attr_axis()?)
            }
            OpKind::Abs => {
                need(1)?;
                self.abs(inputs[0])
            }
            OpKind::Square => {
                need(1)?;
                self.square(inputs[0])
            }
            OpKind::Sqrt => {
                need(1)?;
                self.sqrt(inputs[0])
            }
            OpKind::MaxWithScalar => {
                need(1)?;
                self.max_scalar(inputs[0], attr_scalar()?)
            }
            OpKind::Recip => {
                need(1)?;
                self.recip(inputs[0])
            }
        }
    }

    // ── Composites (recorded as primitive sequences) ────────────────

    /// x·W + b
    pub fn linear(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let xw = self.matmul(x, w)?;
        self.add(&xw, b)
    }

    /// Flatten and sum every element into a rank-0 scalar.
    pub fn sum_all(&mut self, x: &Tensor) -> Result<Tensor> {
        let flat = self.reshape(x, &[x.len()])?;
        self.sum_axis(&flat, 0)
    }

    /// Flatten and average every element into a rank-0 scalar.
    pub fn mean_all(&mut self, x: &Tensor) -> Result<Tensor> {
        let flat = self.reshape(x, &[x.len()])?;
        self.mean_axis(&flat, 0)
    }

    /// Per-row layer normalization over the last axis of a rank-2 tensor,
    /// with learned gain and offset of shape `[cols]`.
    ///
    /// Row statistics broadcast over the feature axis only after a
    /// transpose, keeping every broadcast on leading axes.
    pub fn layer_norm(&mut self, x: &Tensor, gain: &Tensor, offset: &Tensor) -> Result<Tensor> {
        const LN_EPS: f64 = 1e-5;
        let mu = self.mean_axis(x, 1)?;
        let xt = self.transpose(x)?;
        let centered_t = self.sub(&xt, &mu)?;
        let sq_t = self.square(&centered_t)?;
        let var = self.mean_axis(&sq_t, 0)?;
        let var_eps = self.add(&var, &Tensor::scalar(LN_EPS))?;
        let sigma = self.sqrt(&var_eps)?;
        let inv = self.recip(&sigma)?;
        let normed_t = self.mul(&centered_t, &inv)?;
        let normed = self.transpose(&normed_t)?;
        let gained = self.mul(&normed, gain)?;
        self.add(&gained, offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], values: &[f64]) -> Tensor {
        Tensor::from_vec(shape, values.to_vec()).unwrap()
    }

    fn p(shape: &[usize], values: &[f64]) -> Tensor {
        Tensor::parameter(shape, values.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::inference();
        let out = tape.softmax(&t(&[2], &[0.0, 0.0]), 0).unwrap();
        assert_eq!(out.values_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn matmul_by_identity_is_identity() {
        let mut tape = Tape::inference();
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let out = tape.matmul(&id, &m).unwrap();
        assert_eq!(out.values_vec(), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn softmax_matches_scalar_exp_normalize_oracle() {
        // independent oracle: plain scalar arithmetic
        let logits = [1.0f64, 2.0, 3.0];
        let exps: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
        let sum: f64 = exps.iter().sum();
        let expected: Vec<f64> = exps.iter().map(|e| e / sum).collect();

        let mut tape = Tape::inference();
        let out = tape.softmax(&t(&[3], &logits), 0).unwrap();
        for (got, want) in out.values_vec().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = p(&[3], &[1.0, -2.0, 0.5]);
        let mut tape = Tape::new();
        let loss = tape.sum_all(&x).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares_is_two_x() {
        let x = p(&[2], &[1.0, 2.0]);
        let mut tape = Tape::new();
        let sq = tape.square(&x).unwrap();
        let loss = tape.sum_all(&sq).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    /// Test-local central finite differences, independent of grad_check.
    fn numeric_grad(build: impl Fn(&mut Tape) -> Tensor, param: &Tensor, step: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(param.len());
        for i in 0..param.len() {
            let orig = param.values()[i];
            param.update_values(|v| v[i] = orig + step);
            let plus = build(&mut Tape::inference()).item();
            param.update_values(|v| v[i] = orig - step);
            let minus = build(&mut Tape::inference()).item();
            param.update_values(|v| v[i] = orig);
            out.push((plus - minus) / (2.0 * step));
        }
        out
    }

    fn assert_close_rel(analytic: &[f64], numeric: &[f64], tol: f64) {
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < tol, "element {i}: analytic {a}, numeric {n}, rel {rel}");
        }
    }

    #[test]
    fn mae_regression_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let w = p(&[3, 3], &draw(9));
        let x = t(&[3, 3], &draw(9));
        let y = t(&[3, 3], &draw(9));
        let build = |tape: &mut Tape| {
            let wx = tape.matmul(&w, &x).unwrap();
            let diff = tape.sub(&wx, &y).unwrap();
            let ab = tape.abs(&diff).unwrap();
            tape.mean_all(&ab).unwrap()
        };
        let mut tape = Tape::new();
        let loss = build(&mut tape);
        tape.backward(&loss).unwrap();
        let analytic = w.grad().unwrap();
        let numeric = numeric_grad(build, &w, 1e-6);
        assert_close_rel(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn gradients_accumulate_across_reuses() {
        let x = p(&[2], &[3.0, 4.0]);
        let mut tape = Tape::new();
        let prod = tape.mul(&x, &x).unwrap();
        let loss = tape.sum_all(&prod).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, 8.0]);
    }

    #[test]
    fn shape_mismatch_names_kind_and_shapes() {
        let mut tape = Tape::inference();
        let err = tape.matmul(&t(&[2, 3], &[0.0; 6]), &t(&[2, 2], &[0.0; 4])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn unknown_kind_is_a_configuration_error() {
        let err = "florble".parse::<OpKind>().unwrap_err();
        assert!(matches!(err, DynastyError::Config(_)));
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let x = p(&[2], &[1.0, 2.0]);
        let mut tape = Tape::new();
        let y = tape.relu(&x).unwrap();
        let err = tape.backward(&y).unwrap_err();
        assert!(matches!(err, DynastyError::Contract(_)));
    }

    #[test]
    fn backward_clears_the_tape() {
        let x = p(&[2], &[1.0, 2.0]);
        let mut tape = Tape::new();
        let sq = tape.square(&x).unwrap();
        let loss = tape.sum_all(&sq).unwrap();
        assert!(tape.num_ops() > 0);
        tape.backward(&loss).unwrap();
        assert_eq!(tape.num_ops(), 0);
        let err = tape.backward(&loss).unwrap_err();
        assert!(matches!(err, DynastyError::Contract(_)));
    }

    #[test]
    fn leading_axis_broadcast_forward_and_backward() {
        let a = p(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = p(&[3], &[10.0, 20.0, 30.0]);
        let mut tape = Tape::new();
        let sum = tape.add(&a, &b).unwrap();
        assert_eq!(sum.values_vec(), vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let loss = tape.sum_all(&sum).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 6]);
        // the broadcast operand collects gradient from every leading slot
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn interior_broadcast_is_rejected() {
        let mut tape = Tape::inference();
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2], &[0.0; 2]);
        let err = tape.add(&a, &b).unwrap_err();
        assert!(matches!(err, DynastyError::Dimension { .. }));
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales_survivors() {
        let x = t(&[100], &[1.0; 100]);
        let mut tape = Tape::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eval = tape.dropout(&x, 0.25, false, &mut rng).unwrap();
        assert_eq!(eval.values_vec(), vec![1.0; 100]);

        let train = tape.dropout(&x, 0.25, true, &mut rng).unwrap();
        let vals = train.values_vec();
        let scale = 1.0 / 0.75;
        assert!(vals.iter().all(|&v| v == 0.0 || (v - scale).abs() < 1e-15));
        assert!(vals.iter().any(|&v| v == 0.0));
        assert!(vals.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn reshape_roundtrip_is_identity() {
        let x = t(&[2, 6], &(0..12).map(|v| v as f64).collect::<Vec<_>>());
        let mut tape = Tape::inference();
        let a = tape.reshape(&x, &[3, 4]).unwrap();
        let b = tape.reshape(&a, &[2, 6]).unwrap();
        assert_eq!(b.values_vec(), x.values_vec());
        assert_eq!(b.shape(), x.shape());
    }

    #[test]
    fn softmax_rows_are_stochastic_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = t(&[3, 4], &logits);
            let shifted: Vec<f64> = logits
                .chunks(4)
                .flat_map(|row| {
                    let c = rng.gen_range(-100.0..100.0);
                    row.iter().map(move |v| v + c)
                })
                .collect();
            let xs = t(&[3, 4], &shifted);
            let mut tape = Tape::inference();
            let s = tape.softmax(&x, 1).unwrap();
            let ss = tape.softmax(&xs, 1).unwrap();
            for row in s.values_vec().chunks(4) {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for (a, b) in s.values_vec().iter().zip(ss.values_vec().iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 3], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let mut tape = Tape::inference();
        let cat = tape.concat(&[&a, &b], 1).unwrap();
        assert_eq!(cat.shape(), &[2, 5]);
        assert_eq!(cat.values_vec(), vec![1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]);
        let back = tape.slice(&cat, 1, 2, 5).unwrap();
        assert_eq!(back.values_vec(), b.values_vec());
    }

    #[test]
    fn layer_norm_centers_and_scales_rows() {
        let x = t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 3.0, 10.0]);
        let gain = t(&[4], &[1.0; 4]);
        let offset = t(&[4], &[0.0; 4]);
        let mut tape = Tape::inference();
        let out = tape.layer_norm(&x, &gain, &offset).unwrap();
        for row in out.values_vec().chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // epsilon shifts variance slightly
        }
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::inference();
        let err = tape.sqrt(&t(&[1], &[-1.0])).unwrap_err();
        assert!(matches!(err, DynastyError::NonFinite { .. }));

        let big = t(&[1], &[1e308]);
        let doubled = tape.scalar_mul(&big, 10.0);
        assert!(matches!(doubled.unwrap_err(), DynastyError::NonFinite { .. }));
    }

    #[test]
    fn apply_dispatches_by_kind() {
        let mut tape = Tape::inference();
        let x = t(&[2, 2], &[1.0, -2.0, 3.0, -4.0]);
        let out = tape
            .apply(OpKind::Relu, &[&x], &OpAttrs::default())
            .unwrap();
        assert_eq!(out.values_vec(), vec![1.0, 0.0, 3.0, 0.0]);
        let summed = tape
            .apply(OpKind::SumAxis, &[&x], &OpAttrs { axis: Some(0), ..Default::default() })
            .unwrap();
        assert_eq!(summed.values_vec(), vec![4.0, -6.0]);
        let err = tape.apply(OpKind::SumAxis, &[&x], &OpAttrs::default()).unwrap_err();
        assert!(matches!(err, DynastyError::Config(_)));
    }
}
