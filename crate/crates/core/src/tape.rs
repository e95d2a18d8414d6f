//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass in execution
//! order. Backward walks the record once in reverse, which is a valid
//! reverse topological order because inputs always precede their users;
//! gradients accumulate additively where a value fans out.
//!
//! A tape is confined to a single thread and is rebuilt per forward pass.
//! Parameters live outside the tape in a [`crate::nn::ParamStore`]; leaves
//! remember which parameter they came from so gradients can be routed back.

use crate::error::TensorError;
use crate::tensor::{self, Tensor};

/// Index of a node on a tape.
pub type NodeId = usize;

enum Rule {
    Leaf,
    Add,
    Scale(f64),
    Relu,
    Concat { axis: usize },
    Reshape { from: Vec<usize> },
    MeanAxes { axes: Vec<usize>, from: Vec<usize> },
    Matmul,
    ConvTemporal { stride: usize, padding: usize },
    GraphShift { op: Tensor },
    Linear,
    /// `affine` marks fixed-moment (evaluation) mode, where the mean and
    /// variance are constants rather than functions of the input.
    BatchNorm { xhat: Tensor, inv_std: Vec<f64>, gamma: Tensor, affine: bool },
    SoftmaxCrossEntropy { probs: Tensor, labels: Vec<usize> },
}

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    rule: Rule,
    needs_grad: bool,
    /// Parameter slot this leaf mirrors, if any.
    param: Option<usize>,
}

/// Gradients of one backward pass, indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

/// Operation record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<NodeId>, rule: Rule) -> NodeId {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node { value, parents, rule, needs_grad, param: None });
        self.nodes.len() - 1
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            rule: Rule::Leaf,
            needs_grad: false,
            param: None,
        });
        self.nodes.len() - 1
    }

    /// A differentiable leaf, usually an input under test.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            rule: Rule::Leaf,
            needs_grad: true,
            param: None,
        });
        self.nodes.len() - 1
    }

    /// A differentiable leaf mirroring parameter slot `param` of the
    /// enclosing store.
    pub fn param_leaf(&mut self, value: Tensor, param: usize) -> NodeId {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            rule: Rule::Leaf,
            needs_grad: true,
            param: Some(param),
        });
        self.nodes.len() - 1
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = tensor::add(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(v, vec![a, b], Rule::Add))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = tensor::scale(&self.nodes[a].value, c);
        self.push(v, vec![a], Rule::Scale(c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = tensor::relu(&self.nodes[a].value);
        self.push(v, vec![a], Rule::Relu)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| &self.nodes[p].value).collect();
        let v = Tensor::concat(&tensors, axis)?;
        Ok(self.push(v, parts.to_vec(), Rule::Concat { axis }))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let from = self.nodes[a].value.shape().to_vec();
        let v = self.nodes[a].value.reshaped(shape)?;
        Ok(self.push(v, vec![a], Rule::Reshape { from }))
    }

    pub fn mean_over_axes(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId, TensorError> {
        let from = self.nodes[a].value.shape().to_vec();
        let v = tensor::mean_over_axes(&self.nodes[a].value, axes)?;
        Ok(self.push(v, vec![a], Rule::MeanAxes { axes: axes.to_vec(), from }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = tensor::matmul(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(v, vec![a, b], Rule::Matmul))
    }

    pub fn conv_temporal(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let v =
            tensor::conv_temporal(&self.nodes[x].value, &self.nodes[w].value, stride, padding)?;
        Ok(self.push(v, vec![x, w], Rule::ConvTemporal { stride, padding }))
    }

    /// Contract the spatial (last) axis with a constant operator matrix.
    pub fn graph_shift(&mut self, x: NodeId, op: &Tensor) -> Result<NodeId, TensorError> {
        let v = tensor::graph_shift(&self.nodes[x].value, op)?;
        Ok(self.push(v, vec![x], Rule::GraphShift { op: op.clone() }))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = tensor::linear(&self.nodes[x].value, &self.nodes[w].value, &self.nodes[b].value)?;
        Ok(self.push(v, vec![x, w, b], Rule::Linear))
    }

    /// Channel-wise batch normalization of `x: (N, C, ..)` along axis 1.
    ///
    /// With `batch_stats = true` the moments come from the batch itself and
    /// are returned so the caller can fold them into running statistics;
    /// otherwise `moments` supplies fixed per-channel `(mean, var)`
    /// (evaluation mode) and the op is a plain affine map.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        moments: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(NodeId, Option<(Vec<f64>, Vec<f64>)>), TensorError> {
        let xv = &self.nodes[x].value;
        if xv.ndim() < 2 {
            return Err(TensorError::BadShape {
                what: format!("batch_norm input {:?}", xv.shape()),
            });
        }
        let c = xv.shape()[1];
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                what: "batch_norm scale/shift".into(),
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let n = xv.shape()[0];
        let inner: usize = xv.shape()[2..].iter().product();
        let m = (n * inner) as f64;

        let (mean, var, batch) = match moments {
            Some((mu, vr)) => (mu.to_vec(), vr.to_vec(), false),
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        for i in 0..inner {
                            mean[ch] += xv.data()[base + i];
                        }
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        for i in 0..inner {
                            let d = xv.data()[base + i] - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(xv.shape().to_vec());
        let mut out = Tensor::zeros(xv.shape().to_vec());
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for i in 0..inner {
                    let h = (xv.data()[base + i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[base + i] = h;
                    out.data_mut()[base + i] = gv.data()[ch] * h + bv.data()[ch];
                }
            }
        }
        let rule = Rule::BatchNorm { xhat, inv_std, gamma: gv.clone(), affine: !batch };
        let id = self.push(out, vec![x, gamma, beta], rule);
        Ok((id, if batch { Some((mean, var)) } else { None }))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, TensorError> {
        let lv = &self.nodes[logits].value;
        if lv.ndim() != 2 || lv.shape()[0] != labels.len() {
            return Err(TensorError::BadShape {
                what: format!("cross_entropy logits {:?} vs {} labels", lv.shape(), labels.len()),
            });
        }
        let classes = lv.shape()[1];
        for &l in labels {
            if l >= classes {
                return Err(TensorError::LabelOutOfRange { label: l, classes });
            }
        }
        let probs = tensor::softmax_rows(lv)?;
        let n = labels.len();
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            loss -= probs.at(&[i, l]).max(f64::MIN_POSITIVE).ln();
        }
        loss /= n as f64;
        let rule = Rule::SoftmaxCrossEntropy { probs, labels: labels.to_vec() };
        Ok(self.push(Tensor::scalar(loss), vec![logits], rule))
    }

    /// Gradients of a scalar `loss` with respect to every node that needs
    /// them. Each node's rule runs exactly once, in reverse record order.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let lv = &self.nodes[loss].value;
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(1.0));
        for id in (0..=loss).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let gout = grads[id].take().unwrap();
            self.apply_rule(id, &gout, &mut grads)?;
            grads[id] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    /// Route gradients of parameter leaves back into `sink(slot, grad)`.
    pub fn scatter_param_grads(
        &self,
        grads: &Gradients,
        mut sink: impl FnMut(usize, &Tensor),
    ) {
        for (id, node) in self.nodes.iter().enumerate() {
            if let (Some(slot), Some(g)) = (node.param, grads.get(id)) {
                sink(slot, g);
            }
        }
    }

    fn accumulate(
        grads: &mut [Option<Tensor>],
        id: NodeId,
        delta: Tensor,
    ) -> Result<(), TensorError> {
        match &mut grads[id] {
            Some(g) => *g = tensor::add(g, &delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn apply_rule(
        &self,
        id: NodeId,
        gout: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        let node = &self.nodes[id];
        let wants = |p: NodeId| self.nodes[p].needs_grad;
        match &node.rule {
            Rule::Leaf => {}
            Rule::Add => {
                for &p in &node.parents {
                    if wants(p) {
                        Self::accumulate(grads, p, gout.clone())?;
                    }
                }
            }
            Rule::Scale(c) => {
                let p = node.parents[0];
                if wants(p) {
                    Self::accumulate(grads, p, tensor::scale(gout, *c))?;
                }
            }
            Rule::Relu => {
                let p = node.parents[0];
                if wants(p) {
                    let xv = &self.nodes[p].value;
                    let mut g = gout.clone();
                    for (gv, &x) in g.data_mut().iter_mut().zip(xv.data()) {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    Self::accumulate(grads, p, g)?;
                }
            }
            Rule::Concat { axis } => {
                let mut start = 0;
                for &p in &node.parents {
                    let len = self.nodes[p].value.shape()[*axis];
                    if wants(p) {
                        Self::accumulate(grads, p, gout.narrow(*axis, start, len)?)?;
                    }
                    start += len;
                }
            }
            Rule::Reshape { from } => {
                let p = node.parents[0];
                if wants(p) {
                    Self::accumulate(grads, p, gout.reshaped(from.clone())?)?;
                }
            }
            Rule::MeanAxes { axes, from } => {
                let p = node.parents[0];
                if wants(p) {
                    let reduce_n: usize = axes.iter().map(|&d| from[d]).product();
                    let inv = 1.0 / reduce_n as f64;
                    let mut g = Tensor::zeros(from.clone());
                    let strides = g.strides();
                    let keep: Vec<usize> =
                        (0..from.len()).filter(|d| !axes.contains(d)).collect();
                    let mut idx = vec![0usize; from.len()];
                    for flat in 0..g.len() {
                        let mut rem = flat;
                        for d in 0..from.len() {
                            idx[d] = rem / strides[d];
                            rem %= strides[d];
                        }
                        let mut o = 0usize;
                        for &d in &keep {
                            o = o * from[d] + idx[d];
                        }
                        g.data_mut()[flat] = gout.data()[o] * inv;
                    }
                    Self::accumulate(grads, p, g)?;
                }
            }
            Rule::Matmul => {
                let (a, b) = (node.parents[0], node.parents[1]);
                let av = &self.nodes[a].value;
                let bv = &self.nodes[b].value;
                let ar = av.ndim();
                let (m, k) = (av.shape()[ar - 2], av.shape()[ar - 1]);
                let n = bv.shape()[bv.ndim() - 1];
                let batches: usize = av.shape()[..ar - 2].iter().product();
                let shared_b = bv.ndim() == 2 && ar > 2;
                if wants(a) {
                    // dA = dC . B^T, per batch slice
                    let mut ga = Tensor::zeros(av.shape().to_vec());
                    for t in 0..batches {
                        let gbase = t * m * n;
                        let bbase = if shared_b { 0 } else { t * k * n };
                        let abase = t * m * k;
                        for i in 0..m {
                            for j in 0..k {
                                let mut acc = 0.0;
                                for q in 0..n {
                                    acc += gout.data()[gbase + i * n + q]
                                        * bv.data()[bbase + j * n + q];
                                }
                                ga.data_mut()[abase + i * k + j] = acc;
                            }
                        }
                    }
                    Self::accumulate(grads, a, ga)?;
                }
                if wants(b) {
                    // dB = A^T . dC, summed over batch when B is shared
                    let mut gb = Tensor::zeros(bv.shape().to_vec());
                    for t in 0..batches {
                        let gbase = t * m * n;
                        let bbase = if shared_b { 0 } else { t * k * n };
                        let abase = t * m * k;
                        for j in 0..k {
                            for q in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += av.data()[abase + i * k + j]
                                        * gout.data()[gbase + i * n + q];
                                }
                                gb.data_mut()[bbase + j * n + q] += acc;
                            }
                        }
                    }
                    Self::accumulate(grads, b, gb)?;
                }
            }
            Rule::ConvTemporal { stride, padding } => {
                let (x, w) = (node.parents[0], node.parents[1]);
                let xv = &self.nodes[x].value;
                let wv = &self.nodes[w].value;
                let (nb, c_in, t, s) =
                    (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let (c_out, _, kt) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let t_out = gout.shape()[2];
                let mut gx = Tensor::zeros(xv.shape().to_vec());
                let mut gw = Tensor::zeros(wv.shape().to_vec());
                for b in 0..nb {
                    for co in 0..c_out {
                        for to in 0..t_out {
                            let gbase = ((b * c_out + co) * t_out + to) * s;
                            let t0 = (to * stride) as isize - *padding as isize;
                            for ci in 0..c_in {
                                for dt in 0..kt {
                                    let ti = t0 + dt as isize;
                                    if ti < 0 || ti >= t as isize {
                                        continue;
                                    }
                                    let xbase = ((b * c_in + ci) * t + ti as usize) * s;
                                    let wval = wv.data()[(co * c_in + ci) * kt + dt];
                                    let mut wacc = 0.0;
                                    for i in 0..s {
                                        let g = gout.data()[gbase + i];
                                        gx.data_mut()[xbase + i] += wval * g;
                                        wacc += xv.data()[xbase + i] * g;
                                    }
                                    gw.data_mut()[(co * c_in + ci) * kt + dt] += wacc;
                                }
                            }
                        }
                    }
                }
                if wants(x) {
                    Self::accumulate(grads, x, gx)?;
                }
                if wants(w) {
                    Self::accumulate(grads, w, gw)?;
                }
            }
            Rule::GraphShift { op } => {
                let p = node.parents[0];
                if wants(p) {
                    // dx[.., q] = sum_p op[p, q] * dy[.., p]
                    let gx = tensor::graph_shift(gout, &tensor::transpose2(op)?)?;
                    Self::accumulate(grads, p, gx)?;
                }
            }
            Rule::Linear => {
                let (x, w, b) = (node.parents[0], node.parents[1], node.parents[2]);
                let xv = &self.nodes[x].value;
                let wv = &self.nodes[w].value;
                let (n, f) = (xv.shape()[0], xv.shape()[1]);
                let c = wv.shape()[0];
                if wants(x) {
                    // dX = dY . W
                    let mut gx = Tensor::zeros(vec![n, f]);
                    for i in 0..n {
                        for j in 0..f {
                            let mut acc = 0.0;
                            for q in 0..c {
                                acc += gout.data()[i * c + q] * wv.data()[q * f + j];
                            }
                            gx.data_mut()[i * f + j] = acc;
                        }
                    }
                    Self::accumulate(grads, x, gx)?;
                }
                if wants(w) {
                    // dW = dY^T . X
                    let mut gw = Tensor::zeros(vec![c, f]);
                    for q in 0..c {
                        for j in 0..f {
                            let mut acc = 0.0;
                            for i in 0..n {
                                acc += gout.data()[i * c + q] * xv.data()[i * f + j];
                            }
                            gw.data_mut()[q * f + j] = acc;
                        }
                    }
                    Self::accumulate(grads, w, gw)?;
                }
                if wants(b) {
                    let mut gb = Tensor::zeros(vec![c]);
                    for i in 0..n {
                        for q in 0..c {
                            gb.data_mut()[q] += gout.data()[i * c + q];
                        }
                    }
                    Self::accumulate(grads, b, gb)?;
                }
            }
            Rule::BatchNorm { xhat, inv_std, gamma, affine } => {
                let (x, g, b) = (node.parents[0], node.parents[1], node.parents[2]);
                let c = gamma.len();
                let n = xhat.shape()[0];
                let inner: usize = xhat.shape()[2..].iter().product();
                let m = (n * inner) as f64;
                // per-channel sums of dy and dy * xhat
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for bi in 0..n {
                    for ch in 0..c {
                        let base = (bi * c + ch) * inner;
                        for i in 0..inner {
                            let dy = gout.data()[base + i];
                            sum_dy[ch] += dy;
                            sum_dy_xhat[ch] += dy * xhat.data()[base + i];
                        }
                    }
                }
                if wants(g) {
                    Self::accumulate(grads, g, Tensor::new(vec![c], sum_dy_xhat.clone())?)?;
                }
                if wants(b) {
                    Self::accumulate(grads, b, Tensor::new(vec![c], sum_dy.clone())?)?;
                }
                if wants(x) {
                    let mut gx = Tensor::zeros(xhat.shape().to_vec());
                    for bi in 0..n {
                        for ch in 0..c {
                            let base = (bi * c + ch) * inner;
                            let k = gamma.data()[ch] * inv_std[ch];
                            for i in 0..inner {
                                let dy = gout.data()[base + i];
                                gx.data_mut()[base + i] = if *affine {
                                    k * dy
                                } else {
                                    k * (dy
                                        - sum_dy[ch] / m
                                        - xhat.data()[base + i] * sum_dy_xhat[ch] / m)
                                };
                            }
                        }
                    }
                    Self::accumulate(grads, x, gx)?;
                }
            }
            Rule::SoftmaxCrossEntropy { probs, labels } => {
                let p = node.parents[0];
                if wants(p) {
                    let n = labels.len();
                    let classes = probs.shape()[1];
                    let gscale = gout.data()[0] / n as f64;
                    let mut g = probs.clone();
                    for (i, &l) in labels.iter().enumerate() {
                        g.data_mut()[i * classes + l] -= 1.0;
                    }
                    for v in g.data_mut() {
                        *v *= gscale;
                    }
                    Self::accumulate(grads, p, g)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn randn(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn grad_of_linear_loss_is_the_fixed_input() {
        // loss = sum_j w_j x_j with x fixed => dw = x
        let mut tape = Tape::new();
        let xval = randn(vec![1, 5], 2);
        let x = tape.constant(xval.clone());
        let w = tape.variable(randn(vec![1, 5], 1));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let y = tape.linear(x, w, b).unwrap();
        let grads = tape.backward(y).unwrap();
        let gw = grads.get(w).unwrap();
        for (g, v) in gw.data().iter().zip(xval.data()) {
            assert!((g - v).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_of_quadratic_is_the_point() {
        // loss = sum(w^2)/2 via matmul: w (1,n) . w^T (n,1) = sum w^2
        let mut tape = Tape::new();
        let wval = randn(vec![1, 4], 3);
        let w = tape.variable(wval.clone());
        let wt = tape.reshape(w, vec![4, 1]).unwrap();
        let q = tape.matmul(w, wt).unwrap();
        let loss = tape.scale(q, 0.5);
        let grads = tape.backward(loss).unwrap();
        let gw = grads.get(w).unwrap();
        // d(sum w^2 / 2)/dw = w, but w feeds the product twice (fan-out)
        for (g, v) in gw.data().iter().zip(wval.data()) {
            assert!((g - v).abs() < 1e-12, "{g} vs {v}");
        }
    }

    #[test]
    fn fanout_diamond_accumulates_both_paths() {
        // y = (2x) + (3x); dy/dx = 5
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(1.5));
        let a = tape.scale(x, 2.0);
        let b = tape.scale(x, 3.0);
        let y = tape.add(a, b).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.variable(randn(vec![2, 2], 4));
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_classes() {
        let mut tape = Tape::new();
        let logits = tape.variable(Tensor::zeros(vec![1, 4]));
        let loss = tape.softmax_cross_entropy(logits, &[2]).unwrap();
        let got = tape.value(loss).item().unwrap();
        assert!((got - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let logits = tape.variable(Tensor::zeros(vec![1, 3]));
        assert!(matches!(
            tape.softmax_cross_entropy(logits, &[3]),
            Err(TensorError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn concat_axis_out_of_range() {
        let mut tape = Tape::new();
        let a = tape.variable(Tensor::zeros(vec![2, 2]));
        assert!(tape.concat(&[a, a], 2).is_err());
    }
}
