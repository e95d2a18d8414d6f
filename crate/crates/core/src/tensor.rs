//! Dense n-dimensional `f64` tensor with row-major layout.
//!
//! This is the value type everything else computes on. The differentiable
//! operator set lives in [`crate::tape`]; the plain kernels here carry the
//! forward arithmetic and are reused by both the tape and the test oracles.

use crate::error::TensorError;

/// Dense row-major tensor. Shape dims are all >= 1 and
/// `data.len() == product(shape)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::BadShape {
                what: format!("dims must all be >= 1, got {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::BadShape {
                what: format!("shape {shape:?} wants {n} elements, buffer has {}", data.len()),
            });
        }
        Ok(Self { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: vec![0.0; n], requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: vec![value; n], requires_grad: false }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value], requires_grad: false }
    }

    /// 2-D identity.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() != 1 {
            return Err(TensorError::BadShape {
                what: format!("item() on shape {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let strides = self.strides();
        idx.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn at_mut(&mut self, idx: &[usize]) -> &mut f64 {
        let o = self.offset(idx);
        &mut self.data[o]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest |a - b| over all elements. Shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                what: "max_abs_diff".into(),
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// View with a new shape; element count must be unchanged.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || n != self.data.len() {
            return Err(TensorError::BadShape {
                what: format!("reshape {:?} -> {:?}", self.shape, shape),
            });
        }
        Ok(Tensor { shape, data: self.data.clone(), requires_grad: false })
    }

    /// Sub-tensor covering `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor, TensorError> {
        if axis >= self.shape.len() {
            return Err(TensorError::AxisOutOfRange { axis, ndim: self.shape.len() });
        }
        if start + len > self.shape[axis] || len == 0 {
            return Err(TensorError::BadShape {
                what: format!(
                    "narrow axis {axis} range {start}..{} of dim {}",
                    start + len,
                    self.shape[axis]
                ),
            });
        }
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * self.shape[axis] + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Tensor::new(out_shape, data)
    }

    /// Concatenate along `axis`. All inputs must agree on the other dims.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::BadShape {
            what: "concat of zero tensors".into(),
        })?;
        if axis >= first.shape.len() {
            return Err(TensorError::AxisOutOfRange { axis, ndim: first.shape.len() });
        }
        let mut axis_total = 0;
        for p in parts {
            if p.shape.len() != first.shape.len()
                || p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    what: "concat".into(),
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            axis_total += p.shape[axis];
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for p in parts {
                let rows = p.shape[axis];
                let base = o * rows * inner;
                data.extend_from_slice(&p.data[base..base + rows * inner]);
            }
        }
        Tensor::new(out_shape, data)
    }

    /// Reorder indices along `axis` so that output slot `i` holds input
    /// slot `perm[i]`.
    pub fn permute_along(&self, axis: usize, perm: &[usize]) -> Result<Tensor, TensorError> {
        if axis >= self.shape.len() {
            return Err(TensorError::AxisOutOfRange { axis, ndim: self.shape.len() });
        }
        if perm.len() != self.shape[axis] {
            return Err(TensorError::BadShape {
                what: format!("permutation of len {} on dim {}", perm.len(), self.shape[axis]),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        let mut out = Tensor::zeros(self.shape.clone());
        for o in 0..outer {
            for (i, &src) in perm.iter().enumerate() {
                let dst_base = (o * dim + i) * inner;
                let src_base = (o * dim + src) * inner;
                out.data[dst_base..dst_base + inner]
                    .copy_from_slice(&self.data[src_base..src_base + inner]);
            }
        }
        Ok(out)
    }
}

/// Elementwise a + b.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch {
            what: "add".into(),
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor { shape: a.shape.clone(), data, requires_grad: false })
}

/// a + c * b, in place on a clone of `a`.
pub fn axpy(a: &Tensor, c: f64, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch {
            what: "axpy".into(),
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + c * y).collect();
    Ok(Tensor { shape: a.shape.clone(), data, requires_grad: false })
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|v| c * v)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Matrix product. Accepts:
/// - `[m, k] x [k, n]`
/// - `[.., m, k] x [k, n]` (shared right-hand side over leading dims)
/// - `[.., m, k] x [.., k, n]` (equal leading dims, per-slice product)
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (ar, br) = (a.ndim(), b.ndim());
    if ar < 2 || br < 2 {
        return Err(TensorError::BadShape {
            what: format!("matmul needs >= 2 dims, got {:?} x {:?}", a.shape, b.shape),
        });
    }
    let (m, k) = (a.shape[ar - 2], a.shape[ar - 1]);
    let (kb, n) = (b.shape[br - 2], b.shape[br - 1]);
    if k != kb {
        return Err(TensorError::ShapeMismatch {
            what: "matmul inner dims".into(),
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let a_lead = &a.shape[..ar - 2];
    let b_lead = &b.shape[..br - 2];
    let shared_b = b_lead.is_empty();
    if !shared_b && a_lead != b_lead {
        return Err(TensorError::ShapeMismatch {
            what: "matmul leading dims".into(),
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let batches: usize = a_lead.iter().product();
    let mut out_shape = a_lead.to_vec();
    out_shape.push(m);
    out_shape.push(n);
    let mut out = vec![0.0; batches * m * n];
    for t in 0..batches {
        let abase = t * m * k;
        let bbase = if shared_b { 0 } else { t * k * n };
        let obase = t * m * n;
        for i in 0..m {
            for p in 0..k {
                let av = a.data[abase + i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b.data[bbase + p * n..bbase + (p + 1) * n];
                let orow = &mut out[obase + i * n..obase + (i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// 2-D transpose.
pub fn transpose2(a: &Tensor) -> Result<Tensor, TensorError> {
    if a.ndim() != 2 {
        return Err(TensorError::BadShape {
            what: format!("transpose2 on shape {:?}", a.shape),
        });
    }
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = Tensor::zeros(vec![n, m]);
    for i in 0..m {
        for j in 0..n {
            out.data[j * m + i] = a.data[i * n + j];
        }
    }
    Ok(out)
}

/// Output frame count of a temporal convolution.
pub fn conv_out_len(t: usize, kt: usize, stride: usize, padding: usize) -> usize {
    (t + 2 * padding - kt) / stride + 1
}

/// Correlation along the time axis of `x: (N, C_in, T, S)` with
/// `w: (C_out, C_in, K_t)`. Zero padding at both temporal ends, the spatial
/// axis is untouched. Output is `(N, C_out, T', S)`.
pub fn conv_temporal(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    if x.ndim() != 4 || w.ndim() != 3 {
        return Err(TensorError::BadShape {
            what: format!("conv_temporal x {:?} w {:?}", x.shape, w.shape),
        });
    }
    let (nb, c_in, t, s) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (c_out, wc_in, kt) = (w.shape[0], w.shape[1], w.shape[2]);
    if wc_in != c_in {
        return Err(TensorError::ShapeMismatch {
            what: "conv_temporal channels".into(),
            lhs: x.shape.clone(),
            rhs: w.shape.clone(),
        });
    }
    if kt % 2 == 0 {
        return Err(TensorError::EvenKernel { kt });
    }
    if stride == 0 {
        return Err(TensorError::BadShape { what: "stride 0".into() });
    }
    if kt > t + 2 * padding {
        return Err(TensorError::KernelTooLong { kt, extent: t + 2 * padding });
    }
    let t_out = conv_out_len(t, kt, stride, padding);
    let mut out = Tensor::zeros(vec![nb, c_out, t_out, s]);
    for b in 0..nb {
        for co in 0..c_out {
            for to in 0..t_out {
                let obase = ((b * c_out + co) * t_out + to) * s;
                let t0 = (to * stride) as isize - padding as isize;
                for ci in 0..c_in {
                    for dt in 0..kt {
                        let ti = t0 + dt as isize;
                        if ti < 0 || ti >= t as isize {
                            continue;
                        }
                        let wv = w.data[(co * c_in + ci) * kt + dt];
                        if wv == 0.0 {
                            continue;
                        }
                        let xbase = ((b * c_in + ci) * t + ti as usize) * s;
                        let xrow = &x.data[xbase..xbase + s];
                        let orow = &mut out.data[obase..obase + s];
                        for (o, xv) in orow.iter_mut().zip(xrow) {
                            *o += wv * xv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Contraction of the spatial (last) axis with an operator matrix:
/// `y[.., p] = sum_q op[p, q] * x[.., q]`. `op` must be `(S_out, S_in)`.
pub fn graph_shift(x: &Tensor, op: &Tensor) -> Result<Tensor, TensorError> {
    if op.ndim() != 2 {
        return Err(TensorError::BadShape {
            what: format!("graph_shift operator shape {:?}", op.shape),
        });
    }
    let ndim = x.ndim();
    let s_in = x.shape[ndim - 1];
    let (s_out, cols) = (op.shape[0], op.shape[1]);
    if cols != s_in {
        return Err(TensorError::ShapeMismatch {
            what: "graph_shift spatial dims".into(),
            lhs: x.shape.clone(),
            rhs: op.shape.clone(),
        });
    }
    let rows: usize = x.shape[..ndim - 1].iter().product();
    let mut out_shape = x.shape.clone();
    out_shape[ndim - 1] = s_out;
    let mut out = vec![0.0; rows * s_out];
    for r in 0..rows {
        let xrow = &x.data[r * s_in..(r + 1) * s_in];
        let orow = &mut out[r * s_out..(r + 1) * s_out];
        for (p, o) in orow.iter_mut().enumerate() {
            let oprow = &op.data[p * s_in..(p + 1) * s_in];
            let mut acc = 0.0;
            for (a, xv) in oprow.iter().zip(xrow) {
                acc += a * xv;
            }
            *o = acc;
        }
    }
    Tensor::new(out_shape, out)
}

/// Mean over the given axes (removed from the shape). Axes must be sorted,
/// unique and in range. Reducing every axis yields shape `[1]`.
pub fn mean_over_axes(x: &Tensor, axes: &[usize]) -> Result<Tensor, TensorError> {
    for (i, &ax) in axes.iter().enumerate() {
        if ax >= x.ndim() {
            return Err(TensorError::AxisOutOfRange { axis: ax, ndim: x.ndim() });
        }
        if i > 0 && axes[i - 1] >= ax {
            return Err(TensorError::BadShape {
                what: format!("axes must be sorted unique, got {axes:?}"),
            });
        }
    }
    let keep: Vec<usize> = (0..x.ndim()).filter(|d| !axes.contains(d)).collect();
    let out_shape: Vec<usize> = if keep.is_empty() {
        vec![1]
    } else {
        keep.iter().map(|&d| x.shape[d]).collect()
    };
    let reduce_n: usize = axes.iter().map(|&d| x.shape[d]).product();
    let mut out = Tensor::zeros(out_shape);
    let strides = x.strides();
    let mut idx = vec![0usize; x.ndim()];
    for flat in 0..x.data.len() {
        let mut rem = flat;
        for d in 0..x.ndim() {
            idx[d] = rem / strides[d];
            rem %= strides[d];
        }
        let mut o = 0usize;
        for &d in &keep {
            o = o * x.shape[d] + idx[d];
        }
        out.data[o] += x.data[flat];
    }
    let inv = 1.0 / reduce_n as f64;
    for v in &mut out.data {
        *v *= inv;
    }
    Ok(out)
}

/// Dense layer `y = x . w^T + b` with `x: (N, F)`, `w: (C, F)`, `b: (C)`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1 {
        return Err(TensorError::BadShape {
            what: format!("linear x {:?} w {:?} b {:?}", x.shape, w.shape, b.shape),
        });
    }
    let (n, f) = (x.shape[0], x.shape[1]);
    let (c, wf) = (w.shape[0], w.shape[1]);
    if wf != f || b.shape[0] != c {
        return Err(TensorError::ShapeMismatch {
            what: "linear dims".into(),
            lhs: x.shape.clone(),
            rhs: w.shape.clone(),
        });
    }
    let mut out = Tensor::zeros(vec![n, c]);
    for i in 0..n {
        let xrow = &x.data[i * f..(i + 1) * f];
        for j in 0..c {
            let wrow = &w.data[j * f..(j + 1) * f];
            let mut acc = b.data[j];
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += xv * wv;
            }
            out.data[i * c + j] = acc;
        }
    }
    Ok(out)
}

/// Row-wise softmax of `(N, C)` logits, with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor, TensorError> {
    if logits.ndim() != 2 {
        return Err(TensorError::BadShape {
            what: format!("softmax_rows on {:?}", logits.shape),
        });
    }
    let (n, c) = (logits.shape[0], logits.shape[1]);
    let mut out = Tensor::zeros(vec![n, c]);
    for i in 0..n {
        let row = &logits.data[i * c..(i + 1) * c];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..c {
            let e = (row[j] - mx).exp();
            out.data[i * c + j] = e;
            denom += e;
        }
        for j in 0..c {
            out.data[i * c + j] /= denom;
        }
    }
    Ok(out)
}
