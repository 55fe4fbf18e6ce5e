//! Pure array math shared by forward ops and their backward rules.
//!
//! Everything here operates on flat row-major `f64` slices plus explicit
//! shapes; no tape interaction, no allocation tricks.

/// Geometry of a reduction / lane walk along `axis` of `shape`:
/// returns (outer, axis_len, inner) with `len(x) == outer * axis_len * inner`.
pub fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Leading-axes broadcast: the smaller shape must equal a trailing suffix of
/// the larger one (a rank-0 scalar matches anything). Returns the output shape.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let (big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if big[big.len() - small.len()..] == *small {
        Some(big.to_vec())
    } else {
        None
    }
}

/// out = A(m,k) · B(k,n)
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// out = A(m,k) · B(n,k)ᵀ
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// out = A(k,m)ᵀ · B(k,n)
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn transpose2d(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Numerically stable exp-normalize along `axis`.
pub fn softmax_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_geometry(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                max = max.max(x[at(k)]);
            }
            let mut sum = 0.0;
            for k in 0..len {
                let e = (x[at(k)] - max).exp();
                out[at(k)] = e;
                sum += e;
            }
            for k in 0..len {
                out[at(k)] /= sum;
            }
        }
    }
    out
}

/// Jacobian-vector product of softmax along `axis`:
/// dx_k = s_k * (g_k - Σ_j g_j s_j) per lane.
pub fn softmax_backward_axis(s: &[f64], g: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_geometry(shape, axis);
    let mut out = vec![0.0; s.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut dot = 0.0;
            for k in 0..len {
                dot += g[at(k)] * s[at(k)];
            }
            for k in 0..len {
                out[at(k)] = s[at(k)] * (g[at(k)] - dot);
            }
        }
    }
    out
}

pub fn reduce_axis_sum(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_geometry(shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                out[o * inner + i] += x[(o * len + k) * inner + i];
            }
        }
    }
    out
}

/// Scatter `g` (shape with `axis` removed) back along `axis`, scaled by `scale`.
pub fn spread_axis(g: &[f64], shape: &[usize], axis: usize, scale: f64) -> Vec<f64> {
    let (outer, len, inner) = axis_geometry(shape, axis);
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                out[(o * len + k) * inner + i] = g[o * inner + i] * scale;
            }
        }
    }
    out
}

pub fn slice_axis(x: &[f64], shape: &[usize], axis: usize, start: usize, end: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_geometry(shape, axis);
    let span = end - start;
    let mut out = Vec::with_capacity(outer * span * inner);
    for o in 0..outer {
        let from = (o * len + start) * inner;
        out.extend_from_slice(&x[from..from + span * inner]);
    }
    out
}

/// Add `g` (the slice gradient) into `acc` at the sliced positions.
pub fn slice_backward_into(
    acc: &mut [f64],
    g: &[f64],
    shape: &[usize],
    axis: usize,
    start: usize,
    span: usize,
) {
    let (outer, len, inner) = axis_geometry(shape, axis);
    for o in 0..outer {
        let to = (o * len + start) * inner;
        let from = o * span * inner;
        for i in 0..span * inner {
            acc[to + i] += g[from + i];
        }
    }
}

/// Concatenate parts along `axis`. All parts share the off-axis geometry.
pub fn concat_axis(parts: &[(&[f64], usize)], outer: usize, inner: usize) -> Vec<f64> {
    let total: usize = parts.iter().map(|(p, _)| p.len()).sum();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for (vals, len) in parts {
            let from = o * len * inner;
            out.extend_from_slice(&vals[from..from + len * inner]);
        }
    }
    out
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}
