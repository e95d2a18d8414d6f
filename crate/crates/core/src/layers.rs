//! Graph convolution layers and their direct-summation oracles.
//!
//! The shipped forward is the separable two-stage form: a temporal
//! convolution with label-specific weights followed by contraction of the
//! spatial axis with the matching normalized adjacency operator,
//!
//! ```text
//! y = sum_l  A_l . conv_temporal(x; W_l, stride)
//! ```
//!
//! The same layer binds either the edge partition (edge convolution) or
//! the node partition (node convolution). The shared layer of the
//! body-part hybrid exchanges features between edges and nodes through
//! normalized incidence operators instead.
//!
//! Every fast path has a literal per-neighbor oracle in this module
//! ([`graph_conv_direct`], [`shared_conv_direct`]) that walks receptive
//! fields element by element with the same weights; equality of the two
//! routes is what the verification suite certifies.

use std::sync::Arc;

use rand::Rng;

use crate::error::LayerError;
use crate::nn::{init_uniform, ParamId, ParamStore};
use crate::skeleton::{LabelPartition, SkeletonTopology, NUM_LABELS};
use crate::tape::{NodeId, Tape};
use crate::tensor::{self, Tensor};

/// Spatio-temporal graph convolution: label-specific temporal weights,
/// then the per-label adjacency contraction.
#[derive(Debug, Clone)]
pub struct GraphConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kt: usize,
    pub stride: usize,
    weights: [ParamId; NUM_LABELS],
    partition: Arc<LabelPartition>,
}

impl GraphConvLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kt: usize,
        stride: usize,
        partition: Arc<LabelPartition>,
        rng: &mut impl Rng,
    ) -> Result<Self, LayerError> {
        if kt % 2 == 0 {
            return Err(LayerError::Tensor(crate::error::TensorError::EvenKernel { kt }));
        }
        let fan_in = in_channels * kt;
        let fan_out = out_channels * kt;
        let shape = vec![out_channels, in_channels, kt];
        let values: Vec<Tensor> =
            (0..NUM_LABELS).map(|_| init_uniform(shape.clone(), fan_in, fan_out, rng)).collect();
        let mut ids = values
            .into_iter()
            .enumerate()
            .map(|(l, v)| store.insert(format!("{prefix}.w{l}"), v, true));
        let weights = [ids.next().unwrap(), ids.next().unwrap(), ids.next().unwrap()];
        Ok(Self { in_channels, out_channels, kt, stride, weights, partition })
    }

    /// Zero-padding that keeps stride-1 output length equal to the input.
    pub fn padding(&self) -> usize {
        (self.kt - 1) / 2
    }

    pub fn partition(&self) -> &Arc<LabelPartition> {
        &self.partition
    }

    /// The three weight tensors as plain values.
    pub fn weight_values(&self, store: &ParamStore) -> [Tensor; NUM_LABELS] {
        [
            store.get(self.weights[0]).value.clone(),
            store.get(self.weights[1]).value.clone(),
            store.get(self.weights[2]).value.clone(),
        ]
    }

    /// Fast path on the tape: `x` is `(B, C_in, T, S)`, output
    /// `(B, C_out, T', S)`.
    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: NodeId,
    ) -> Result<NodeId, LayerError> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 {
            return Err(LayerError::Tensor(crate::error::TensorError::BadShape {
                what: format!("graph conv input {shape:?}"),
            }));
        }
        if shape[1] != self.in_channels {
            return Err(LayerError::ChannelMismatch {
                what: "graph conv input",
                got: shape[1],
                want: self.in_channels,
            });
        }
        if shape[3] != self.partition.num_slots() {
            return Err(LayerError::SpatialMismatch {
                got: shape[3],
                want: self.partition.num_slots(),
            });
        }
        if !tape.value(x).all_finite() {
            return Err(LayerError::NonFiniteInput);
        }
        let pad = self.padding();
        let mut acc: Option<NodeId> = None;
        for l in 0..NUM_LABELS {
            let w = store.leaf(tape, self.weights[l]);
            let h = tape.conv_temporal(x, w, self.stride, pad)?;
            let shifted = tape.graph_shift(h, self.partition.op(l))?;
            acc = Some(match acc {
                None => shifted,
                Some(a) => tape.add(a, shifted)?,
            });
        }
        Ok(acc.expect("three labels"))
    }
}

/// Guard rail for the direct paths, which are meant for desk-scale
/// instances only.
#[derive(Debug, Clone)]
pub struct DirectOpts {
    /// Upper bound on the element-operation estimate.
    pub max_element_ops: usize,
}

impl Default for DirectOpts {
    fn default() -> Self {
        Self { max_element_ops: 1 << 28 }
    }
}

/// Independent per-(spatial label, frame offset) weight table, the general
/// form of the combined spatio-temporal labeling. Entry `(l, dt)` holds a
/// `(C_out, C_in)` matrix for spatial label `l` at kernel tap `dt`; the
/// flat index `l + dt * 3` is the combined label value.
#[derive(Debug, Clone)]
pub struct SpatioTemporalWeights {
    pub kt: usize,
    tables: Vec<Tensor>,
}

impl SpatioTemporalWeights {
    /// Arbitrary per-label matrices; `tables[l + dt * 3]`, all `(C_out, C_in)`.
    pub fn general(kt: usize, tables: Vec<Tensor>) -> Result<Self, LayerError> {
        if tables.len() != kt * NUM_LABELS {
            return Err(LayerError::Tensor(crate::error::TensorError::BadShape {
                what: format!("want {} weight tables, got {}", kt * NUM_LABELS, tables.len()),
            }));
        }
        Ok(Self { kt, tables })
    }

    /// The table the shipped separable layer induces: tap `dt` of label
    /// `l`'s temporal kernel, `W_l[.., dt]`.
    pub fn from_factorized(weights: &[Tensor; NUM_LABELS]) -> Self {
        let (c_out, c_in, kt) =
            (weights[0].shape()[0], weights[0].shape()[1], weights[0].shape()[2]);
        let mut tables = Vec::with_capacity(kt * NUM_LABELS);
        for dt in 0..kt {
            for w in weights {
                let mut m = Tensor::zeros(vec![c_out, c_in]);
                for co in 0..c_out {
                    for ci in 0..c_in {
                        *m.at_mut(&[co, ci]) = w.at(&[co, ci, dt]);
                    }
                }
                tables.push(m);
            }
        }
        Self { kt, tables }
    }

    pub fn get(&self, label: usize, dt: usize) -> &Tensor {
        &self.tables[dt * NUM_LABELS + label]
    }

    pub fn out_channels(&self) -> usize {
        self.tables[0].shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.tables[0].shape()[1]
    }
}

/// Literal quadruple-loop reference for a graph convolution: for each root
/// slot and output frame, walk every neighbor at every kernel tap, look up
/// the weight by combined label, and normalize by the count of same-label
/// neighbors. Same function as the fast path when given
/// [`SpatioTemporalWeights::from_factorized`] weights.
pub fn graph_conv_direct(
    x: &Tensor,
    weights: &SpatioTemporalWeights,
    partition: &LabelPartition,
    stride: usize,
    opts: &DirectOpts,
) -> Result<Tensor, LayerError> {
    let (b_n, c_in, t_in, s) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if c_in != weights.in_channels() {
        return Err(LayerError::ChannelMismatch {
            what: "direct input",
            got: c_in,
            want: weights.in_channels(),
        });
    }
    if s != partition.num_slots() {
        return Err(LayerError::SpatialMismatch { got: s, want: partition.num_slots() });
    }
    let kt = weights.kt;
    if kt % 2 == 0 {
        return Err(LayerError::Tensor(crate::error::TensorError::EvenKernel { kt }));
    }
    let pad = (kt - 1) / 2;
    if kt > t_in + 2 * pad {
        return Err(LayerError::Tensor(crate::error::TensorError::KernelTooLong {
            kt,
            extent: t_in + 2 * pad,
        }));
    }
    let c_out = weights.out_channels();
    let t_out = tensor::conv_out_len(t_in, kt, stride, pad);
    let est = b_n * s * t_out * kt * s.max(1) * c_out * c_in;
    if est > opts.max_element_ops {
        return Err(LayerError::InstanceTooLarge { elements: est, guard: opts.max_element_ops });
    }
    let labels = partition.labels();
    let mut y = Tensor::zeros(vec![b_n, c_out, t_out, s]);
    for p in 0..s {
        let hood: Vec<(usize, u8)> = labels.neighborhood(p).collect();
        // same-label counts within the neighborhood (the normalizer)
        let mut z = [0usize; NUM_LABELS];
        for &(_, l) in &hood {
            z[l as usize] += 1;
        }
        for b in 0..b_n {
            for to in 0..t_out {
                let t0 = (to * stride) as isize - pad as isize;
                for dt in 0..kt {
                    let ti = t0 + dt as isize;
                    if ti < 0 || ti >= t_in as isize {
                        continue;
                    }
                    let ti = ti as usize;
                    for &(q, l) in &hood {
                        let w = weights.get(l as usize, dt);
                        let norm = 1.0 / z[l as usize] as f64;
                        for co in 0..c_out {
                            let mut acc = 0.0;
                            for ci in 0..c_in {
                                acc += w.at(&[co, ci]) * x.at(&[b, ci, ti, q]);
                            }
                            *y.at_mut(&[b, co, to, p]) += norm * acc;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Row-normalized edge-from-node incidence: entry `(e, n)` is 1/2 when
/// joint `n` is an endpoint of bone `e`.
pub fn edge_from_node_incidence(topo: &SkeletonTopology) -> Tensor {
    let (e, n) = (topo.num_edges(), topo.num_joints());
    let mut m = Tensor::zeros(vec![e, n]);
    for (ei, &(a, b)) in topo.bones().iter().enumerate() {
        *m.at_mut(&[ei, a]) = 0.5;
        *m.at_mut(&[ei, b]) = 0.5;
    }
    m
}

/// Row-normalized node-from-edge incidence: entry `(n, e)` is
/// `1/degree(n)` when bone `e` touches joint `n`.
pub fn node_from_edge_incidence(topo: &SkeletonTopology) -> Tensor {
    let (e, n) = (topo.num_edges(), topo.num_joints());
    let mut m = Tensor::zeros(vec![n, e]);
    for j in 0..n {
        let deg = topo.incident_edges(j).len();
        for &ei in topo.incident_edges(j) {
            *m.at_mut(&[j, ei]) = 1.0 / deg as f64;
        }
    }
    m
}

/// Shared node/edge convolution of the body-part hybrid. Each edge
/// receives its own feature plus the normalized sum of its two endpoint
/// nodes; each node receives its own feature plus the normalized sum of
/// its incident edges. Four pointwise channel maps, one per flow; purely
/// spatial (no temporal mixing).
#[derive(Debug, Clone)]
pub struct SharedConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    w_ee: ParamId,
    w_ne: ParamId,
    w_nn: ParamId,
    w_en: ParamId,
    edge_from_node: Tensor,
    node_from_edge: Tensor,
    num_edges: usize,
    num_nodes: usize,
}

impl SharedConvLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        topo: &SkeletonTopology,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = vec![out_channels, in_channels, 1];
        let names = ["w_ee", "w_ne", "w_nn", "w_en"];
        let mut ids = names.iter().map(|name| {
            let v = init_uniform(shape.clone(), in_channels, out_channels, rng);
            store.insert(format!("{prefix}.{name}"), v, true)
        });
        let (w_ee, w_ne, w_nn, w_en) = (
            ids.next().unwrap(),
            ids.next().unwrap(),
            ids.next().unwrap(),
            ids.next().unwrap(),
        );
        Self {
            in_channels,
            out_channels,
            w_ee,
            w_ne,
            w_nn,
            w_en,
            edge_from_node: edge_from_node_incidence(topo),
            node_from_edge: node_from_edge_incidence(topo),
            num_edges: topo.num_edges(),
            num_nodes: topo.num_joints(),
        }
    }

    /// Weight values in flow order `(ee, ne, nn, en)`.
    pub fn weight_values(&self, store: &ParamStore) -> [Tensor; 4] {
        [
            store.get(self.w_ee).value.clone(),
            store.get(self.w_ne).value.clone(),
            store.get(self.w_nn).value.clone(),
            store.get(self.w_en).value.clone(),
        ]
    }

    pub fn incidence(&self) -> (&Tensor, &Tensor) {
        (&self.edge_from_node, &self.node_from_edge)
    }

    /// Fast path: `x_e (B, C, T, E)`, `x_n (B, C, T, N)` with equal
    /// channel counts; returns `(y_e, y_n)`.
    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x_e: NodeId,
        x_n: NodeId,
    ) -> Result<(NodeId, NodeId), LayerError> {
        let se = tape.value(x_e).shape().to_vec();
        let sn = tape.value(x_n).shape().to_vec();
        if se.len() != 4 || sn.len() != 4 {
            return Err(LayerError::Tensor(crate::error::TensorError::BadShape {
                what: format!("shared conv inputs {se:?} / {sn:?}"),
            }));
        }
        if se[1] != self.in_channels || sn[1] != self.in_channels {
            return Err(LayerError::ChannelMismatch {
                what: "shared conv input",
                got: se[1].max(sn[1]),
                want: self.in_channels,
            });
        }
        if se[3] != self.num_edges {
            return Err(LayerError::SpatialMismatch { got: se[3], want: self.num_edges });
        }
        if sn[3] != self.num_nodes {
            return Err(LayerError::SpatialMismatch { got: sn[3], want: self.num_nodes });
        }
        if se[0] != sn[0] || se[2] != sn[2] {
            return Err(LayerError::Tensor(crate::error::TensorError::ShapeMismatch {
                what: "shared conv batch/frames".into(),
                lhs: se,
                rhs: sn,
            }));
        }
        let w_ee = store.leaf(tape, self.w_ee);
        let w_ne = store.leaf(tape, self.w_ne);
        let w_nn = store.leaf(tape, self.w_nn);
        let w_en = store.leaf(tape, self.w_en);
        // edge output: own feature + mean of endpoint nodes
        let e_self = tape.conv_temporal(x_e, w_ee, 1, 0)?;
        let n_mix = tape.conv_temporal(x_n, w_ne, 1, 0)?;
        let n_to_e = tape.graph_shift(n_mix, &self.edge_from_node)?;
        let y_e = tape.add(e_self, n_to_e)?;
        // node output: own feature + mean of incident edges
        let n_self = tape.conv_temporal(x_n, w_nn, 1, 0)?;
        let e_mix = tape.conv_temporal(x_e, w_en, 1, 0)?;
        let e_to_n = tape.graph_shift(e_mix, &self.node_from_edge)?;
        let y_n = tape.add(n_self, e_to_n)?;
        Ok((y_e, y_n))
    }
}

/// Literal reference for the shared layer: per edge, per node, walk the
/// Fig-style receptive fields (an edge with its two endpoints; a node with
/// its incident bones) element by element.
pub fn shared_conv_direct(
    x_e: &Tensor,
    x_n: &Tensor,
    weights: &[Tensor; 4],
    topo: &SkeletonTopology,
    opts: &DirectOpts,
) -> Result<(Tensor, Tensor), LayerError> {
    let (b_n, c_in, t_len, e) = (x_e.shape()[0], x_e.shape()[1], x_e.shape()[2], x_e.shape()[3]);
    let n = x_n.shape()[3];
    if e != topo.num_edges() {
        return Err(LayerError::SpatialMismatch { got: e, want: topo.num_edges() });
    }
    if n != topo.num_joints() {
        return Err(LayerError::SpatialMismatch { got: n, want: topo.num_joints() });
    }
    let c_out = weights[0].shape()[0];
    let est = b_n * t_len * (e + n) * 4 * c_out * c_in;
    if est > opts.max_element_ops {
        return Err(LayerError::InstanceTooLarge { elements: est, guard: opts.max_element_ops });
    }
    let wmat = |w: &Tensor, co: usize, ci: usize| w.at(&[co, ci, 0]);
    let (w_ee, w_ne, w_nn, w_en) = (&weights[0], &weights[1], &weights[2], &weights[3]);
    let mut y_e = Tensor::zeros(vec![b_n, c_out, t_len, e]);
    let mut y_n = Tensor::zeros(vec![b_n, c_out, t_len, n]);
    for b in 0..b_n {
        for t in 0..t_len {
            for (ei, &(p, q)) in topo.bones().iter().enumerate() {
                for co in 0..c_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        acc += wmat(w_ee, co, ci) * x_e.at(&[b, ci, t, ei]);
                        let endpoint_mean =
                            0.5 * (x_n.at(&[b, ci, t, p]) + x_n.at(&[b, ci, t, q]));
                        acc += wmat(w_ne, co, ci) * endpoint_mean;
                    }
                    *y_e.at_mut(&[b, co, t, ei]) = acc;
                }
            }
            for v in 0..n {
                let incident = topo.incident_edges(v);
                let inv_deg = 1.0 / incident.len() as f64;
                for co in 0..c_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        acc += wmat(w_nn, co, ci) * x_n.at(&[b, ci, t, v]);
                        let mut edge_mean = 0.0;
                        for &ei in incident {
                            edge_mean += x_e.at(&[b, ci, t, ei]);
                        }
                        acc += wmat(w_en, co, ci) * edge_mean * inv_deg;
                    }
                    *y_n.at_mut(&[b, co, t, v]) = acc;
                }
            }
        }
    }
    Ok((y_e, y_n))
}
