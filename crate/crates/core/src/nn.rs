//! Parameters, the two stateful layers (batch normalization, dense), the
//! checkpoint format, and finite-difference gradient verification.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::TensorError;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// A named tensor with a gradient buffer. Non-trainable entries (running
/// statistics) are persisted but skipped by optimizers.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Slot index of a parameter within its store.
pub type ParamId = usize;

/// Ordered collection of parameters. Insertion order is the checkpoint
/// order and never depends on hashing.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.shape().to_vec());
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Parameter { name, value, grad, trainable });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.entries[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.entries.iter_mut()
    }

    /// Total trainable scalar count.
    pub fn trainable_scalars(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Put a leaf for parameter `id` on the tape.
    pub fn leaf(&self, tape: &mut Tape, id: ParamId) -> NodeId {
        tape.param_leaf(self.entries[id].value.clone().with_requires_grad(), id)
    }

    /// Add the tape's parameter gradients into the store's buffers.
    pub fn accumulate_from(&mut self, tape: &Tape, grads: &crate::tape::Gradients) {
        tape.scatter_param_grads(grads, |slot, g| {
            let buf = self.entries[slot].grad.data_mut();
            for (b, v) in buf.iter_mut().zip(g.data()) {
                *b += v;
            }
        });
    }

    /// Write all entries to a checkpoint file. Bit-exact round trip.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        let mut f = std::fs::File::create(path)?;
        let mut header = String::new();
        header.push_str("gecnn-checkpoint 1\n");
        header.push_str(&format!("params {}\n", self.entries.len()));
        for p in &self.entries {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!(
                "tensor {} {} {}\n",
                p.name,
                if p.trainable { "trainable" } else { "state" },
                dims.join(" ")
            ));
        }
        header.push_str("payload\n");
        f.write_all(header.as_bytes())?;
        for p in &self.entries {
            for v in p.value.data() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Read a checkpoint written by [`ParamStore::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let bad = |m: &str| TensorError::BadCheckpoint(m.to_string());
        let marker = b"payload\n";
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad("missing payload marker"))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header not UTF-8"))?;
        let mut payload = &bytes[split + marker.len()..];
        let mut lines = header.lines();
        match lines.next() {
            Some("gecnn-checkpoint 1") => {}
            Some(other) => {
                return Err(bad(&format!("unsupported header '{other}'")));
            }
            None => return Err(bad("empty file")),
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("params "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing params count"))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("truncated manifest"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some("tensor") {
                return Err(bad("manifest line must start with 'tensor'"));
            }
            let name = parts.next().ok_or_else(|| bad("missing tensor name"))?;
            let trainable = match parts.next() {
                Some("trainable") => true,
                Some("state") => false,
                _ => return Err(bad("missing trainable flag")),
            };
            let shape: Result<Vec<usize>, _> = parts.map(|v| v.parse::<usize>()).collect();
            let shape = shape.map_err(|_| bad("unreadable shape"))?;
            let n: usize = shape.iter().product();
            if payload.len() < n * 8 {
                return Err(bad("payload shorter than manifest"));
            }
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let mut b = [0u8; 8];
                b.copy_from_slice(&payload[i * 8..i * 8 + 8]);
                data.push(f64::from_le_bytes(b));
            }
            payload = &payload[n * 8..];
            store.insert(name, Tensor::new(shape, data)?, trainable);
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(store)
    }
}

/// Uniform(-b, b) init with b = sqrt(6 / (fan_in + fan_out)).
pub fn init_uniform(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-b..b)).collect()).unwrap()
}

/// Channel-wise batch normalization over axis 1 of `(N, C, ..)` input.
///
/// Training mode standardizes with batch moments and folds them into the
/// running statistics with momentum; evaluation mode applies the stored
/// statistics as a fixed affine map.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let gamma = store.insert(format!("{prefix}.gamma"), Tensor::full(vec![channels], 1.0), true);
        let beta = store.insert(format!("{prefix}.beta"), Tensor::zeros(vec![channels]), true);
        let running_mean =
            store.insert(format!("{prefix}.running_mean"), Tensor::zeros(vec![channels]), false);
        let running_var =
            store.insert(format!("{prefix}.running_var"), Tensor::full(vec![channels], 1.0), false);
        Self {
            channels,
            gamma,
            beta,
            running_mean,
            running_var,
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn forward(
        &self,
        store: &mut ParamStore,
        tape: &mut Tape,
        x: NodeId,
        training: bool,
    ) -> Result<NodeId, TensorError> {
        let gamma = store.leaf(tape, self.gamma);
        let beta = store.leaf(tape, self.beta);
        if training {
            let (y, stats) = tape.batch_norm(x, gamma, beta, None, self.eps)?;
            let (mean, var) = stats.expect("batch mode returns moments");
            let m = self.momentum;
            let rm = store.get_mut(self.running_mean).value.data_mut();
            for (r, b) in rm.iter_mut().zip(&mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            let rv = store.get_mut(self.running_var).value.data_mut();
            for (r, b) in rv.iter_mut().zip(&var) {
                *r = m * *r + (1.0 - m) * b;
            }
            Ok(y)
        } else {
            let mean = store.get(self.running_mean).value.data().to_vec();
            let var = store.get(self.running_var).value.data().to_vec();
            let (y, _) = tape.batch_norm(x, gamma, beta, Some((&mean, &var)), self.eps)?;
            Ok(y)
        }
    }
}

/// Dense layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.insert(
            format!("{prefix}.weight"),
            init_uniform(vec![out_features, in_features], in_features, out_features, rng),
            true,
        );
        let bias = store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![out_features]), true);
        Self { in_features, out_features, weight, bias }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: NodeId,
    ) -> Result<NodeId, TensorError> {
        let w = store.leaf(tape, self.weight);
        let b = store.leaf(tape, self.bias);
        tape.linear(x, w, b)
    }
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// `(parameter name, max relative error over sampled coordinates)`.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub rel_tol: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.rel_tol
    }
}

/// Options for [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct FdOptions {
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
    /// Coordinates sampled per parameter tensor (all if fewer).
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { step: 1e-4, rel_tol: 1e-4, samples_per_param: 24, seed: 0 }
    }
}

/// Verify the gradients stored in `store.grad` against central finite
/// differences of `loss_fn` on sampled coordinates of every trainable
/// parameter. `loss_fn` must be deterministic in the parameter values;
/// this is enforced by a double evaluation at the base point.
///
/// Relative error uses `|fd - grad| / (|fd| + |grad| + 1e-8)`.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    mut loss_fn: F,
    opts: &FdOptions,
) -> Result<FdReport, TensorError>
where
    F: FnMut(&mut ParamStore) -> Result<f64, TensorError>,
{
    let l0 = loss_fn(store)?;
    let l1 = loss_fn(store)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(TensorError::NonDeterministic { a: l0, b: l1 });
    }
    let mut rng = crate::rng::stream(opts.seed, "fd-coords");
    let mut per_param = Vec::new();
    let mut max_rel = 0.0f64;
    let mut coords = 0usize;
    for id in 0..store.len() {
        if !store.get(id).trainable {
            continue;
        }
        let name = store.get(id).name.clone();
        let n = store.get(id).value.len();
        let picks: Vec<usize> = if n <= opts.samples_per_param {
            (0..n).collect()
        } else {
            let mut seen = std::collections::BTreeSet::new();
            while seen.len() < opts.samples_per_param {
                seen.insert(rng.gen_range(0..n));
            }
            seen.into_iter().collect()
        };
        let mut worst = 0.0f64;
        for i in picks {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.step;
            let lp = loss_fn(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - opts.step;
            let lm = loss_fn(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * opts.step);
            let an = store.get(id).grad.data()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs() + 1e-8);
            worst = worst.max(rel);
            coords += 1;
        }
        max_rel = max_rel.max(worst);
        per_param.push((name, worst));
    }
    Ok(FdReport { per_param, max_rel_err: max_rel, coords_checked: coords, rel_tol: opts.rel_tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn store_round_trips_bitwise() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(9, "init");
        store.insert("a.w", init_uniform(vec![3, 4], 4, 3, &mut rng), true);
        store.insert("a.running", Tensor::full(vec![3], 0.125), false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        store.save(&path).unwrap();
        let loaded = ParamStore::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in store.iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.trainable, b.trainable);
            assert_eq!(a.value.shape(), b.value.shape());
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // byte-level identity of a re-save
        let path2 = dir.path().join("q.ckpt");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_rejects_truncated_and_garbled_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut store = ParamStore::new();
        store.insert("w", Tensor::full(vec![4], 1.0), true);
        store.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(ParamStore::load(&path), Err(TensorError::BadCheckpoint(_))));
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(ParamStore::load(&path).is_err());
    }

    #[test]
    fn batch_norm_standardizes_in_training_mode() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let mut tape = Tape::new();
        let x = tape.variable(
            Tensor::new(
                vec![2, 2, 3],
                vec![1., 2., 3., 10., 20., 30., 4., 5., 6., 40., 50., 60.],
            )
            .unwrap(),
        );
        let y = bn.forward(&mut store, &mut tape, x, true).unwrap();
        // independent recomputation of the per-channel moments
        let yv = tape.value(y);
        for ch in 0..2 {
            let mut vals = Vec::new();
            for b in 0..2 {
                for i in 0..3 {
                    vals.push(yv.at(&[b, ch, i]));
                }
            }
            let mean: f64 = vals.iter().sum::<f64>() / 6.0;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
        }
    }

    #[test]
    fn batch_norm_constant_channel_outputs_the_shift() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        store.get_mut(store.id_of("bn.beta").unwrap()).value.data_mut().fill(0.75);
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::full(vec![3, 1, 4], 2.5));
        let y = bn.forward(&mut store, &mut tape, x, true).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_eval_mode_is_idempotent_affine() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        // identity scale/shift with unit running stats
        let mut tape = Tape::new();
        let xval = Tensor::new(vec![1, 2, 2], vec![0.3, -0.4, 1.1, 0.9]).unwrap();
        let x = tape.variable(xval.clone());
        let y1 = bn.forward(&mut store, &mut tape, x, false).unwrap();
        let y2 = bn.forward(&mut store, &mut tape, y1, false).unwrap();
        let a = tape.value(y1).clone();
        let b = tape.value(y2).clone();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
        // zero mean unit var stats leave near-standardized data in place
        assert!(a.max_abs_diff(&xval).unwrap() < 1e-4);
    }

    #[test]
    fn finite_diff_confirms_quadratic_and_detects_corruption() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(3, "init");
        let id = store.insert("w", init_uniform(vec![6], 6, 6, &mut rng), true);
        let loss = |s: &mut ParamStore| -> Result<f64, TensorError> {
            Ok(s.get(0).value.data().iter().map(|v| v * v).sum())
        };
        // analytic gradient 2w
        let g: Vec<f64> = store.get(id).value.data().iter().map(|v| 2.0 * v).collect();
        store.get_mut(id).grad = Tensor::new(vec![6], g).unwrap();
        let report = finite_diff_check(
            &mut store,
            loss,
            &FdOptions { rel_tol: 1e-6, ..Default::default() },
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);

        // corrupt one coordinate; the sweep must notice
        store.get_mut(id).grad.data_mut()[2] += 0.5;
        let report = finite_diff_check(
            &mut store,
            loss,
            &FdOptions { rel_tol: 1e-6, ..Default::default() },
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn finite_diff_rejects_nondeterministic_loss() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::full(vec![2], 1.0), true);
        let mut flip = 0.0f64;
        let loss = move |_: &mut ParamStore| -> Result<f64, TensorError> {
            flip += 1.0;
            Ok(flip)
        };
        assert!(matches!(
            finite_diff_check(&mut store, loss, &FdOptions::default()),
            Err(TensorError::NonDeterministic { .. })
        ));
    }
}
