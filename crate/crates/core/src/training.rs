//! Deterministic training loop, evaluation metrics, and the temporal
//! kernel ablation runner.
//!
//! Reference mode is single-threaded: shuffling is a pure function of
//! `(seed, epoch)`, batches are assembled in index order, and two runs
//! with the same seed produce bitwise-identical loss curves.

use crate::error::{DataError, TrainError};
use crate::features::JointSequence;
use crate::models::{Batch, Model, ModelConfig};
use crate::nn::ParamStore;
use crate::skeleton::{SkeletonBundle, SkeletonTopology};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Optimization settings. Learning rate decays stepwise:
/// `lr = base * factor^(epoch / decay_every)` when `decay_every > 0`.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Stop once the epoch's training accuracy reaches this level.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            momentum: 0.9,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            lr_decay_every: 10,
            lr_decay_factor: 0.5,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !self.base_lr.is_finite() || self.base_lr < 0.0 {
            return Err(TrainError::BadLearningRate(self.base_lr));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadBatchSize);
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_decay_every == 0 {
            self.base_lr
        } else {
            self.base_lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
        }
    }
}

/// One optimizer step record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// One epoch summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub train_top1: f64,
}

/// Full training trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// Line-oriented text: one `step` line per optimizer step, one
    /// `epoch` summary line per epoch.
    pub fn to_log_lines(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        for r in &self.steps {
            let _ = writeln!(s, "step epoch={} step={} loss={:.17e} lr={}", r.epoch, r.step, r.loss, r.lr);
        }
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "epoch epoch={} mean_loss={:.17e} lr={} train_top1={:.6}",
                e.epoch, e.mean_loss, e.lr, e.train_top1
            );
        }
        s
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v <- mu v + g`, `theta <- theta - lr v`.
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64) -> Self {
        let velocity =
            store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self { momentum, velocity }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        for (id, v) in self.velocity.iter_mut().enumerate() {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            for i in 0..v.len() {
                let g = p.grad.data()[i];
                let vel = self.momentum * v.data()[i] + g;
                v.data_mut()[i] = vel;
                p.value.data_mut()[i] -= lr * vel;
            }
        }
    }
}

/// Sequences pre-converted to batch row layout so epoch loops only copy.
pub struct PreparedDataset {
    /// Per sample: `(joints rows (M, C_j, T, N), bone rows (M, C_b, T, E), label)`.
    samples: Vec<(Tensor, Tensor, usize)>,
    bodies: usize,
    num_classes: usize,
}

impl PreparedDataset {
    pub fn from_sequences(
        seqs: &[JointSequence],
        topo: &SkeletonTopology,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        let first = seqs.first().ok_or(DataError::BadCount { what: "samples", min: 1, got: 0 })?;
        let bodies = first.bodies();
        let mut samples = Vec::with_capacity(seqs.len());
        for seq in seqs {
            let batch = Batch::from_sequences(&[seq], topo)?;
            samples.push((batch.joints, batch.bones, seq.label));
        }
        Ok(Self { samples, bodies, num_classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, i: usize) -> usize {
        self.samples[i].2
    }

    /// Assemble a batch from sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch, DataError> {
        let joints: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].0).collect();
        let bones: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].1).collect();
        let labels: Vec<usize> = indices.iter().map(|&i| self.samples[i].2).collect();
        Ok(Batch {
            joints: Tensor::concat(&joints, 0)?,
            bones: Tensor::concat(&bones, 0)?,
            labels,
            bodies: self.bodies,
        })
    }
}

/// Fisher-Yates permutation of `0..n`, a pure function of `(seed, epoch)`.
fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = crate::rng::indexed_stream(seed, "shuffle", epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Train `model` in place. Emits one step record per optimizer step and an
/// epoch summary with the training-mode top-1 accuracy of that epoch.
pub fn train(
    model: &dyn Model,
    store: &mut ParamStore,
    data: &PreparedDataset,
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut sgd = Sgd::new(store, cfg.momentum);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = shuffled_indices(data.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut steps_in_epoch = 0usize;
        let mut hits = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.batch(chunk)?;
            let mut tape = Tape::new();
            let logits = model.forward(store, &mut tape, &batch, true)?;
            let loss_id = tape.softmax_cross_entropy(logits, &batch.labels)?;
            let loss = tape.value(loss_id).item()?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, step, loss });
            }
            hits += count_top1_hits(tape.value(logits), &batch.labels);
            store.zero_grads();
            let grads = tape.backward(loss_id)?;
            store.accumulate_from(&tape, &grads);
            sgd.step(store, lr);
            log.steps.push(StepRecord { epoch, step, loss, lr });
            epoch_loss += loss;
            steps_in_epoch += 1;
        }
        let train_top1 = hits as f64 / data.len() as f64;
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / steps_in_epoch as f64,
            lr,
            train_top1,
        });
        if let Some(target) = cfg.stop_at_train_accuracy {
            if train_top1 >= target {
                break;
            }
        }
    }
    Ok(log)
}

/// Classes ranked by descending logit; ties broken by ascending class
/// index (stable order).
pub fn ranked_classes(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    idx
}

fn count_top1_hits(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| ranked_classes(&logits.data()[i * c..(i + 1) * c])[0] == l)
        .count()
}

/// Exact top-k accuracy. `k` must not exceed the class count.
pub fn top_k_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64, TrainError> {
    let c = logits.shape()[1];
    if k > c {
        return Err(TrainError::TopKOutOfRange { k, classes: c });
    }
    let mut hits = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        let ranked = ranked_classes(&logits.data()[i * c..(i + 1) * c]);
        if ranked[..k].contains(&l) {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Evaluation metrics over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub per_class: Vec<f64>,
    /// `confusion[true_class][predicted_class]` sample counts.
    pub confusion: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "format eval-report");
        let _ = writeln!(s, "version 1");
        let _ = writeln!(s, "classes {}", self.class_names.join(" "));
        let _ = writeln!(s, "top1 {:.6}", self.top1);
        let _ = writeln!(s, "top5 {:.6}", self.top5);
        let per: Vec<String> = self.per_class.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "per_class {}", per.join(" "));
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "confusion {}", cells.join(" "));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let bad = |m: &str| {
            TrainError::Data(DataError::BadFile(format!("eval report: {m}")))
        };
        let mut class_names = Vec::new();
        let mut top1 = None;
        let mut top5 = None;
        let mut per_class = Vec::new();
        let mut confusion = Vec::new();
        let mut format_ok = false;
        for line in text.lines() {
            let mut parts = line.trim().split_whitespace();
            match parts.next() {
                Some("format") => format_ok = parts.next() == Some("eval-report"),
                Some("version") => {}
                Some("classes") => class_names = parts.map(str::to_string).collect(),
                Some("top1") => top1 = parts.next().and_then(|v| v.parse().ok()),
                Some("top5") => top5 = parts.next().and_then(|v| v.parse().ok()),
                Some("per_class") => {
                    per_class = parts
                        .map(|v| v.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("unreadable per_class"))?;
                }
                Some("confusion") => {
                    let row: Result<Vec<usize>, _> = parts.map(|v| v.parse()).collect();
                    confusion.push(row.map_err(|_| bad("unreadable confusion row"))?);
                }
                _ => {}
            }
        }
        if !format_ok {
            return Err(bad("missing format header"));
        }
        Ok(Self {
            top1: top1.ok_or_else(|| bad("missing top1"))?,
            top5: top5.ok_or_else(|| bad("missing top5"))?,
            per_class,
            confusion,
            class_names,
        })
    }

    /// Comma-separated per-class accuracy table.
    pub fn per_class_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("class,accuracy\n");
        for (name, acc) in self.class_names.iter().zip(&self.per_class) {
            let _ = writeln!(s, "{name},{acc:.6}");
        }
        s
    }
}

/// Evaluate in evaluation mode over the whole dataset. Top-5 saturates to
/// 1 when there are fewer than five classes.
pub fn evaluate(
    model: &dyn Model,
    store: &mut ParamStore,
    data: &PreparedDataset,
    class_names: &[String],
    batch_size: usize,
) -> Result<EvalReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let c = data.num_classes();
    let mut all_logits = Vec::with_capacity(data.len());
    let mut all_labels = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk)?;
        let mut tape = Tape::new();
        let logits = model.forward(store, &mut tape, &batch, false)?;
        let lv = tape.value(logits);
        for (i, &l) in batch.labels.iter().enumerate() {
            all_logits.push(lv.data()[i * c..(i + 1) * c].to_vec());
            all_labels.push(l);
        }
    }
    let flat: Vec<f64> = all_logits.iter().flatten().copied().collect();
    let logits = Tensor::new(vec![all_labels.len(), c], flat).map_err(TrainError::Tensor)?;
    let top1 = top_k_accuracy(&logits, &all_labels, 1)?;
    let top5 = top_k_accuracy(&logits, &all_labels, 5.min(c))?;
    let mut confusion = vec![vec![0usize; c]; c];
    for (row, &l) in all_labels.iter().enumerate() {
        let pred = ranked_classes(&logits.data()[row * c..(row + 1) * c])[0];
        confusion[l][pred] += 1;
    }
    let per_class: Vec<f64> = (0..c)
        .map(|l| {
            let total: usize = confusion[l].iter().sum();
            if total == 0 {
                0.0
            } else {
                confusion[l][l] as f64 / total as f64
            }
        })
        .collect();
    let names: Vec<String> = if class_names.len() == c {
        class_names.to_vec()
    } else {
        (0..c).map(|i| format!("class{i}")).collect()
    };
    Ok(EvalReport { top1, top5, per_class, confusion, class_names: names })
}

/// One row of the temporal-kernel comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub kt: usize,
    pub top1: f64,
    pub top5: f64,
}

/// Comma-separated table in the published layout: kernel size, top-1, top-5.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("temporal_kernel_size,top1,top5\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.kt, r.top1, r.top5);
    }
    s
}

/// Train one model per kernel size with identical seeds and schedules,
/// then evaluate each on the held-out set.
pub fn ablate_temporal_kernel(
    sizes: &[usize],
    base_cfg: &ModelConfig,
    bundle: &SkeletonBundle,
    train_data: &PreparedDataset,
    eval_data: &PreparedDataset,
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &kt in sizes {
        if kt % 2 == 0 {
            return Err(TrainError::EvenKernelSize(kt));
        }
        let mut cfg = base_cfg.clone();
        cfg.kt = kt;
        let mut store = ParamStore::new();
        let model = crate::models::build_model(&cfg, bundle, &mut store)?;
        train(model.as_ref(), &mut store, train_data, train_cfg)?;
        let names: Vec<String> =
            (0..cfg.num_classes).map(|i| format!("class{i}")).collect();
        let report =
            evaluate(model.as_ref(), &mut store, eval_data, &names, train_cfg.batch_size)?;
        rows.push(AblationRow { kt, top1: report.top1, top5: report.top5 });
    }
    Ok(rows)
}
