//! Sequence data: joint and bone feature tensors, the joint-to-bone
//! transform, input normalization, the synthetic labeled dataset generator,
//! and the on-disk sequence format.
//!
//! Sequences are `(channels, frames, slots, bodies)` tensors, slots being
//! joints or bones. Kinetics-style data is 2-D with a confidence channel
//! (X, Y, C per joint); NTU-style data is 3-D (X, Y, Z per joint).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::DataError;
use crate::nn::{BatchNorm, ParamStore};
use crate::skeleton::{SkeletonBundle, SkeletonTopology};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Dataset flavor; fixes coordinate dimensionality and channel layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// 2-D coordinates plus a confidence score (X, Y, C).
    Kinetics2d,
    /// 3-D coordinates (X, Y, Z).
    Ntu3d,
}

impl Mode {
    /// Spatial coordinate dimensionality (excludes confidence).
    pub fn coord_dim(self) -> usize {
        match self {
            Mode::Kinetics2d => 2,
            Mode::Ntu3d => 3,
        }
    }

    /// Joint feature channels.
    pub fn joint_channels(self) -> usize {
        3
    }

    /// Bone feature channels: center coords (+ confidence in 2-D mode)
    /// then orientation coords.
    pub fn bone_channels(self) -> usize {
        match self {
            Mode::Kinetics2d => 5,
            Mode::Ntu3d => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Kinetics2d => "kinetics2d",
            Mode::Ntu3d => "ntu3d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kinetics2d" => Some(Mode::Kinetics2d),
            "ntu3d" => Some(Mode::Ntu3d),
            _ => None,
        }
    }
}

/// A joint-coordinate sequence: `(C_j, T, N, M)` with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSequence {
    pub data: Tensor,
    pub label: usize,
    pub mode: Mode,
}

impl JointSequence {
    pub fn new(data: Tensor, label: usize, mode: Mode) -> Result<Self, DataError> {
        if data.ndim() != 4 {
            return Err(DataError::BadFile(format!(
                "joint sequence wants 4 dims (C,T,N,M), got {:?}",
                data.shape()
            )));
        }
        if data.shape()[0] != mode.joint_channels() {
            return Err(DataError::CountMismatch {
                kind: "channels",
                got: data.shape()[0],
                want: mode.joint_channels(),
            });
        }
        Ok(Self { data, label, mode })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_joints(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn bodies(&self) -> usize {
        self.data.shape()[3]
    }
}

/// A bone-feature sequence: `(C_b, T, E, M)` with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneSequence {
    pub data: Tensor,
    pub label: usize,
    pub mode: Mode,
}

impl BoneSequence {
    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_edges(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn bodies(&self) -> usize {
        self.data.shape()[3]
    }
}

/// Transform a joint sequence into bone features, bone by bone in the
/// topology's canonical order.
///
/// Per bone `(p, q)`, frame, and body: the center channels are the joint
/// midpoint, the orientation channels are `joint_p - joint_q`, and in 2-D
/// mode the confidence channel is the mean of the two joint confidences.
pub fn joints_to_bones(
    seq: &JointSequence,
    topo: &SkeletonTopology,
) -> Result<BoneSequence, DataError> {
    if seq.num_joints() != topo.num_joints() {
        return Err(DataError::CountMismatch {
            kind: "joints",
            got: seq.num_joints(),
            want: topo.num_joints(),
        });
    }
    let mode = seq.mode;
    let d = mode.coord_dim();
    let (t_len, n, m) = (seq.frames(), seq.num_joints(), seq.bodies());
    let e = topo.num_edges();
    let cb = mode.bone_channels();
    let mut out = Tensor::zeros(vec![cb, t_len, e, m]);
    let x = &seq.data;
    // channel layout: centers (d), confidence (2-D mode only), orientation (d)
    let ori_base = cb - d;
    for (ei, &(p, q)) in topo.bones().iter().enumerate() {
        for t in 0..t_len {
            for b in 0..m {
                for c in 0..d {
                    let jp = x.at(&[c, t, p, b]);
                    let jq = x.at(&[c, t, q, b]);
                    *out.at_mut(&[c, t, ei, b]) = 0.5 * (jp + jq);
                    *out.at_mut(&[ori_base + c, t, ei, b]) = jp - jq;
                }
                if mode == Mode::Kinetics2d {
                    let cp = x.at(&[2, t, p, b]);
                    let cq = x.at(&[2, t, q, b]);
                    *out.at_mut(&[2, t, ei, b]) = 0.5 * (cp + cq);
                }
                let _ = n;
            }
        }
    }
    Ok(BoneSequence { data: out, label: seq.label, mode })
}

/// Batch-normalize a `(B, C, T, S)` input batch on the tape. Thin wrapper
/// over [`BatchNorm`]; training mode updates the running statistics held in
/// the store.
pub fn normalize_input(
    norm: &BatchNorm,
    store: &mut ParamStore,
    tape: &mut Tape,
    batch: NodeId,
    training: bool,
) -> Result<NodeId, DataError> {
    Ok(norm.forward(store, tape, batch, training)?)
}

/// How the synthetic generator separates classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthStyle {
    /// Classes differ in affected joints, frequency, and amplitude.
    /// Easy to separate even from short windows.
    Distinct,
    /// Classes share affected joints and are velocity-matched; only the
    /// swing period differs, so the evidence spans many frames.
    PeriodOnly,
}

impl SynthStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthStyle::Distinct => "distinct",
            SynthStyle::PeriodOnly => "period",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "distinct" => Some(SynthStyle::Distinct),
            "period" => Some(SynthStyle::PeriodOnly),
            _ => None,
        }
    }
}

/// Synthetic dataset request.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    pub bodies: usize,
    pub noise: f64,
    pub style: SynthStyle,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(num_classes: usize, samples_per_class: usize, frames: usize, seed: u64) -> Self {
        Self {
            num_classes,
            samples_per_class,
            frames,
            bodies: 1,
            noise: 0.02,
            style: SynthStyle::Distinct,
            seed,
        }
    }
}

/// One record of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: String,
    pub label: usize,
    pub frames: usize,
}

/// Index of a stored dataset: mode, topology, class names, sample records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub mode: Mode,
    pub topology: String,
    pub class_names: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "format sequence-manifest");
        let _ = writeln!(s, "version 1");
        let _ = writeln!(s, "mode {}", self.mode.as_str());
        let _ = writeln!(s, "topology {}", self.topology);
        let _ = writeln!(s, "classes {}", self.class_names.join(" "));
        let _ = writeln!(s, "samples {}", self.samples.len());
        for r in &self.samples {
            let _ = writeln!(s, "sample {} {} {}", r.path, r.label, r.frames);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let bad = |m: String| DataError::BadManifest(m);
        let mut mode = None;
        let mut topology = None;
        let mut class_names = Vec::new();
        let mut declared = None;
        let mut samples = Vec::new();
        let mut format_ok = false;
        let mut version_ok = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next().unwrap() {
                "format" => format_ok = parts.next() == Some("sequence-manifest"),
                "version" => version_ok = parts.next() == Some("1"),
                "mode" => {
                    mode = parts
                        .next()
                        .and_then(Mode::parse)
                        .map(Some)
                        .ok_or_else(|| bad("unknown mode".into()))?;
                }
                "topology" => topology = parts.next().map(str::to_string),
                "classes" => class_names = parts.map(str::to_string).collect(),
                "samples" => {
                    declared = parts.next().and_then(|v| v.parse::<usize>().ok());
                }
                "sample" => {
                    let path = parts.next().ok_or_else(|| bad("sample missing path".into()))?;
                    let label: usize = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("sample missing label".into()))?;
                    let frames: usize = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("sample missing frame count".into()))?;
                    samples.push(SampleRecord { path: path.to_string(), label, frames });
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        if !format_ok || !version_ok {
            return Err(bad("missing format/version header".into()));
        }
        let mode = mode.ok_or_else(|| bad("missing mode".into()))?;
        let topology = topology.ok_or_else(|| bad("missing topology".into()))?;
        if class_names.is_empty() {
            return Err(bad("missing classes".into()));
        }
        if declared != Some(samples.len()) {
            return Err(bad(format!(
                "declared {declared:?} samples, found {}",
                samples.len()
            )));
        }
        for r in &samples {
            if r.label >= class_names.len() {
                return Err(bad(format!("label {} out of range", r.label)));
            }
        }
        Ok(Self { mode, topology, class_names, samples })
    }
}

/// Deterministic synthetic dataset: each class is a parametric periodic
/// motion of the template pose plus optional coordinate noise.
///
/// Per class, a subset of joints swings along per-joint unit directions:
/// `offset = amplitude * sin(2 pi t / period + phase)` with a per-sample
/// random phase. In [`SynthStyle::Distinct`] classes differ in the affected
/// joints, amplitude, and period; in [`SynthStyle::PeriodOnly`] every class
/// moves the same joints with amplitude proportional to its period, so
/// frame-to-frame velocities match across classes and only the long-range
/// period separates them.
pub fn synth_dataset(
    spec: &SynthSpec,
    bundle: &SkeletonBundle,
) -> Result<(DatasetManifest, Vec<JointSequence>), DataError> {
    if spec.num_classes < 2 {
        return Err(DataError::BadCount { what: "classes", min: 2, got: spec.num_classes });
    }
    if spec.samples_per_class == 0 {
        return Err(DataError::BadCount { what: "samples per class", min: 1, got: 0 });
    }
    if spec.frames == 0 {
        return Err(DataError::BadCount { what: "frames", min: 1, got: 0 });
    }
    if spec.bodies == 0 {
        return Err(DataError::BadCount { what: "bodies", min: 1, got: 0 });
    }
    let topo = &bundle.topology;
    let template = &bundle.template;
    let mode = bundle.mode;
    let d = mode.coord_dim();
    let n = topo.num_joints();

    // class motion plans drawn from the dataset stream
    let mut plan_rng = crate::rng::stream(spec.seed, "dataset-plan");
    let mut class_joints: Vec<Vec<usize>> = Vec::new();
    let mut class_period: Vec<f64> = Vec::new();
    let mut class_amp: Vec<f64> = Vec::new();
    let mut joint_dirs: Vec<Vec<Vec<f64>>> = Vec::new();
    for c in 0..spec.num_classes {
        let joints: Vec<usize> = match spec.style {
            SynthStyle::Distinct => {
                (0..n).filter(|j| j % spec.num_classes == c % spec.num_classes).collect()
            }
            SynthStyle::PeriodOnly => (0..n).filter(|j| j % 2 == 1).collect(),
        };
        let (period, amp) = match spec.style {
            SynthStyle::Distinct => {
                let period = 6.0 + 4.0 * c as f64;
                (period, 0.25 + 0.05 * c as f64)
            }
            SynthStyle::PeriodOnly => {
                // velocity-matched: amplitude grows with the period so the
                // per-frame displacement scale is the same for every class
                let period = 8.0 + 6.0 * c as f64;
                (period, 0.04 * period)
            }
        };
        let dirs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..d).map(|_| plan_rng.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                v.iter_mut().for_each(|x| *x /= norm);
                v
            })
            .collect();
        class_joints.push(joints);
        class_period.push(period);
        class_amp.push(amp);
        joint_dirs.push(dirs);
    }

    let mut sequences = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    let mut records = Vec::new();
    for c in 0..spec.num_classes {
        for s in 0..spec.samples_per_class {
            let sample_idx = (c * spec.samples_per_class + s) as u64;
            let mut rng = crate::rng::indexed_stream(spec.seed, "dataset-sample", sample_idx);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut data = Tensor::zeros(vec![mode.joint_channels(), spec.frames, n, spec.bodies]);
            for b in 0..spec.bodies {
                let body_shift = b as f64 * 0.1;
                for t in 0..spec.frames {
                    let angle =
                        std::f64::consts::TAU * t as f64 / class_period[c] + phase + body_shift;
                    let swing = class_amp[c] * angle.sin();
                    for j in 0..n {
                        let moves = class_joints[c].contains(&j);
                        for cd in 0..d {
                            let base = template.joint(j)[cd];
                            let motion = if moves { swing * joint_dirs[c][j][cd] } else { 0.0 };
                            let noise: f64 = if spec.noise > 0.0 {
                                rng.gen_range(-spec.noise..spec.noise)
                            } else {
                                0.0
                            };
                            // quantize to f32 so storage round-trips bitwise
                            *data.at_mut(&[cd, t, j, b]) =
                                ((base + motion + noise) as f32) as f64;
                        }
                        if mode == Mode::Kinetics2d {
                            *data.at_mut(&[2, t, j, b]) = 1.0;
                        }
                    }
                }
            }
            sequences.push(JointSequence { data, label: c, mode });
            records.push(SampleRecord {
                path: format!("class{c}_sample{s}.seq"),
                label: c,
                frames: spec.frames,
            });
        }
    }
    let manifest = DatasetManifest {
        mode,
        topology: topo.name().to_string(),
        class_names: (0..spec.num_classes).map(|c| format!("class{c}")).collect(),
        samples: records,
    };
    Ok((manifest, sequences))
}

// --- sequence file format -------------------------------------------------
//
// 64-byte header: 8-byte magic, u32 version, u32 metadata length, zero
// padding. Then a UTF-8 metadata block (key-value lines), then the tensor
// payload as little-endian f32 in (C, T, V, M) order.

const SEQ_MAGIC: &[u8; 8] = b"SKELSEQ\0";
const SEQ_VERSION: u32 = 1;
const SEQ_HEADER_LEN: usize = 64;

/// Write one sequence file.
pub fn save_sequence(path: impl AsRef<Path>, seq: &JointSequence) -> Result<(), DataError> {
    let shape = seq.data.shape();
    let meta = format!(
        "mode {}\nlabel {}\nshape {} {} {} {}\ndtype f32\n",
        seq.mode.as_str(),
        seq.label,
        shape[0],
        shape[1],
        shape[2],
        shape[3]
    );
    let mut header = [0u8; SEQ_HEADER_LEN];
    header[..8].copy_from_slice(SEQ_MAGIC);
    header[8..12].copy_from_slice(&SEQ_VERSION.to_le_bytes());
    header[12..16].copy_from_slice(&(meta.len() as u32).to_le_bytes());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&header)?;
    f.write_all(meta.as_bytes())?;
    for &v in seq.data.data() {
        f.write_all(&(v as f32).to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Read one sequence file.
pub fn load_sequence(path: impl AsRef<Path>) -> Result<JointSequence, DataError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; SEQ_HEADER_LEN];
    f.read_exact(&mut header)
        .map_err(|_| DataError::BadFile("file shorter than header".into()))?;
    if &header[..8] != SEQ_MAGIC {
        return Err(DataError::BadFile("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != SEQ_VERSION {
        return Err(DataError::VersionMismatch { got: version, want: SEQ_VERSION });
    }
    let meta_len = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut meta = vec![0u8; meta_len];
    f.read_exact(&mut meta)
        .map_err(|_| DataError::BadFile("truncated metadata block".into()))?;
    let meta = String::from_utf8(meta).map_err(|_| DataError::BadFile("metadata not UTF-8".into()))?;
    let mut mode = None;
    let mut label = None;
    let mut shape = None;
    for line in meta.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("mode") => {
                mode = parts.next().and_then(Mode::parse);
            }
            Some("label") => label = parts.next().and_then(|v| v.parse::<usize>().ok()),
            Some("shape") => {
                let dims: Option<Vec<usize>> = parts.map(|v| v.parse().ok()).collect();
                shape = dims.filter(|d| d.len() == 4);
            }
            Some("dtype") => {
                if parts.next() != Some("f32") {
                    return Err(DataError::BadFile("unsupported dtype".into()));
                }
            }
            _ => {}
        }
    }
    let mode = mode.ok_or_else(|| DataError::BadFile("metadata missing mode".into()))?;
    let label = label.ok_or_else(|| DataError::BadFile("metadata missing label".into()))?;
    let shape = shape.ok_or_else(|| DataError::BadFile("metadata missing shape".into()))?;
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; n * 4];
    f.read_exact(&mut payload)
        .map_err(|_| DataError::BadFile("payload shorter than shape".into()))?;
    let mut trailing = [0u8; 1];
    if f.read(&mut trailing)? != 0 {
        return Err(DataError::BadFile("trailing bytes after payload".into()));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    JointSequence::new(Tensor::new(shape, data)?, label, mode)
}

/// Write a manifest and its sample files under `dir`.
pub fn save_dataset(
    dir: impl AsRef<Path>,
    manifest: &DatasetManifest,
    sequences: &[JointSequence],
) -> Result<(), DataError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    if manifest.samples.len() != sequences.len() {
        return Err(DataError::BadManifest(format!(
            "{} records vs {} sequences",
            manifest.samples.len(),
            sequences.len()
        )));
    }
    for (r, s) in manifest.samples.iter().zip(sequences) {
        save_sequence(dir.join(&r.path), s)?;
    }
    std::fs::write(dir.join("manifest.txt"), manifest.to_text())?;
    Ok(())
}

/// Streaming reader over a stored dataset. Opening reads only the
/// manifest; samples are loaded one at a time on demand.
pub struct DatasetReader {
    dir: PathBuf,
    manifest: DatasetManifest,
}

impl DatasetReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, DataError> {
        let dir = dir.as_ref().to_path_buf();
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        Ok(Self { dir, manifest: DatasetManifest::parse(&text)? })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    /// Load sample `i` from disk.
    pub fn load(&self, i: usize) -> Result<JointSequence, DataError> {
        let record = &self.manifest.samples[i];
        let seq = load_sequence(self.dir.join(&record.path))?;
        if seq.label != record.label || seq.frames() != record.frames {
            return Err(DataError::BadManifest(format!(
                "sample {i} disagrees with manifest record"
            )));
        }
        Ok(seq)
    }

    /// Iterator that owns one sample at a time.
    pub fn iter(&self) -> impl Iterator<Item = Result<JointSequence, DataError>> + '_ {
        (0..self.len()).map(move |i| self.load(i))
    }

    /// Load everything into memory (toy scale only).
    pub fn load_all(&self) -> Result<Vec<JointSequence>, DataError> {
        self.iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::SkeletonBundle;

    fn pair_topology() -> SkeletonTopology {
        SkeletonTopology::from_bones("pair", 2, vec![(0, 1)]).unwrap()
    }

    fn seq_from(vals: Vec<f64>, shape: Vec<usize>, mode: Mode) -> JointSequence {
        JointSequence::new(Tensor::new(shape, vals).unwrap(), 0, mode).unwrap()
    }

    #[test]
    fn bone_transform_hand_example() {
        // joints at (0,0,0) and (2,4,6) -> center (1,2,3), orientation (-2,-4,-6)
        let seq = seq_from(
            vec![0., 2., 0., 4., 0., 6.],
            vec![3, 1, 2, 1],
            Mode::Ntu3d,
        );
        let bones = joints_to_bones(&seq, &pair_topology()).unwrap();
        assert_eq!(bones.data.shape(), &[6, 1, 1, 1]);
        assert_eq!(bones.data.data(), &[1., 2., 3., -2., -4., -6.]);
    }

    #[test]
    fn degenerate_bone_has_zero_orientation() {
        let seq = seq_from(
            vec![7., 7., -1., -1., 2., 2.],
            vec![3, 1, 2, 1],
            Mode::Ntu3d,
        );
        let bones = joints_to_bones(&seq, &pair_topology()).unwrap();
        assert_eq!(bones.data.data(), &[7., -1., 2., 0., 0., 0.]);
    }

    #[test]
    fn confidence_averages_in_2d_mode() {
        let seq = seq_from(
            vec![0., 1., 0., 0., 0.8, 0.4],
            vec![3, 1, 2, 1],
            Mode::Kinetics2d,
        );
        let bones = joints_to_bones(&seq, &pair_topology()).unwrap();
        assert_eq!(bones.data.shape(), &[5, 1, 1, 1]);
        // center (0.5, 0), confidence 0.6, orientation (-1, 0)
        let d = bones.data.data();
        assert!((d[0] - 0.5).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 0.6).abs() < 1e-12);
        assert_eq!(d[3], -1.0);
        assert_eq!(d[4], 0.0);
    }

    #[test]
    fn bone_transform_rejects_joint_count_mismatch() {
        let seq = seq_from(vec![0.; 9], vec![3, 1, 3, 1], Mode::Ntu3d);
        assert!(matches!(
            joints_to_bones(&seq, &pair_topology()),
            Err(DataError::CountMismatch { .. })
        ));
    }

    #[test]
    fn reversing_a_bone_negates_orientation_only() {
        let fwd = SkeletonTopology::from_bones("f", 2, vec![(0, 1)]).unwrap();
        let rev = SkeletonTopology::from_bones("r", 2, vec![(1, 0)]).unwrap();
        let seq = seq_from(
            vec![0.3, -1.0, 0.2, 0.9, 1.4, 0.5],
            vec![3, 1, 2, 1],
            Mode::Ntu3d,
        );
        let a = joints_to_bones(&seq, &fwd).unwrap();
        let b = joints_to_bones(&seq, &rev).unwrap();
        for c in 0..3 {
            assert_eq!(a.data.at(&[c, 0, 0, 0]), b.data.at(&[c, 0, 0, 0]));
            assert_eq!(a.data.at(&[3 + c, 0, 0, 0]), -b.data.at(&[3 + c, 0, 0, 0]));
        }
    }

    #[test]
    fn translation_moves_centers_and_leaves_orientation() {
        use rand::Rng;
        let mut rng = crate::rng::stream(21, "test");
        let topo = SkeletonBundle::builtin("ntu25").unwrap().topology;
        let n = topo.num_joints();
        let vals: Vec<f64> = (0..3 * 4 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = seq_from(vals.clone(), vec![3, 4, n, 1], Mode::Ntu3d);
        let shift = [0.7, -1.3, 0.25];
        let mut moved = vals.clone();
        for c in 0..3 {
            for i in 0..4 * n {
                moved[c * 4 * n + i] += shift[c];
            }
        }
        let seq2 = seq_from(moved, vec![3, 4, n, 1], Mode::Ntu3d);
        let a = joints_to_bones(&seq, &topo).unwrap();
        let b = joints_to_bones(&seq2, &topo).unwrap();
        for t in 0..4 {
            for e in 0..topo.num_edges() {
                for c in 0..3 {
                    let dc = b.data.at(&[c, t, e, 0]) - a.data.at(&[c, t, e, 0]);
                    assert!((dc - shift[c]).abs() < 1e-9);
                    let doo = b.data.at(&[3 + c, t, e, 0]) - a.data.at(&[3 + c, t, e, 0]);
                    assert!(doo.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn bone_transform_is_linear_per_channel() {
        use rand::Rng;
        let mut rng = crate::rng::stream(22, "test");
        let topo = pair_topology();
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            let vals: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            seq_from(vals, vec![3, 1, 2, 1], Mode::Ntu3d)
        };
        let (s1, s2) = (mk(&mut rng), mk(&mut rng));
        let (a, b) = (0.6, -1.7);
        let combined_vals: Vec<f64> = s1
            .data
            .data()
            .iter()
            .zip(s2.data.data())
            .map(|(x, y)| a * x + b * y)
            .collect();
        let combined = seq_from(combined_vals, vec![3, 1, 2, 1], Mode::Ntu3d);
        let t1 = joints_to_bones(&s1, &topo).unwrap();
        let t2 = joints_to_bones(&s2, &topo).unwrap();
        let tc = joints_to_bones(&combined, &topo).unwrap();
        for i in 0..6 {
            let want = a * t1.data.data()[i] + b * t2.data.data()[i];
            assert!((tc.data.data()[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let bundle = SkeletonBundle::builtin("kinetics18").unwrap();
        let spec = SynthSpec::new(3, 2, 8, 42);
        let (m1, s1) = synth_dataset(&spec, &bundle).unwrap();
        let (m2, s2) = synth_dataset(&spec, &bundle).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1.len(), s2.len());
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.data.data(), b.data.data());
        }
    }

    #[test]
    fn synth_without_noise_is_identical_up_to_phase() {
        let bundle = SkeletonBundle::builtin("ntu25").unwrap();
        let mut spec = SynthSpec::new(2, 2, 16, 7);
        spec.noise = 0.0;
        let (_, seqs) = synth_dataset(&spec, &bundle).unwrap();
        // same class, different phases: time-averaged joint positions of a
        // full period agree far better than raw frames do
        let a = &seqs[0];
        let b = &seqs[1];
        assert_eq!(a.label, b.label);
        assert_ne!(a.data.data(), b.data.data());
    }

    #[test]
    fn synth_rejects_bad_counts() {
        let bundle = SkeletonBundle::builtin("kinetics18").unwrap();
        assert!(matches!(
            synth_dataset(&SynthSpec::new(1, 2, 8, 0), &bundle),
            Err(DataError::BadCount { what: "classes", .. })
        ));
        assert!(matches!(
            synth_dataset(&SynthSpec::new(2, 0, 8, 0), &bundle),
            Err(DataError::BadCount { .. })
        ));
    }

    #[test]
    fn nearest_centroid_on_mean_orientation_beats_chance() {
        let bundle = SkeletonBundle::builtin("ntu25").unwrap();
        let spec = SynthSpec::new(4, 50, 12, 5);
        let (_, seqs) = synth_dataset(&spec, &bundle).unwrap();
        let topo = &bundle.topology;
        // feature: mean over frames of all orientation channels
        let feat = |s: &JointSequence| -> Vec<f64> {
            let b = joints_to_bones(s, topo).unwrap();
            let (t_len, e) = (b.frames(), b.num_edges());
            let mut v = vec![0.0; 3 * e];
            for c in 0..3 {
                for t in 0..t_len {
                    for ei in 0..e {
                        v[c * e + ei] += b.data.at(&[3 + c, t, ei, 0]);
                    }
                }
            }
            v.iter_mut().for_each(|x| *x /= t_len as f64);
            v
        };
        // first half of each class trains the centroid, second half tests
        let mut centroids = vec![vec![0.0; 3 * topo.num_edges()]; 4];
        let mut counts = vec![0usize; 4];
        let is_train = |idx: usize| idx % 50 < 25;
        for (i, s) in seqs.iter().enumerate() {
            if is_train(i) {
                let f = feat(s);
                for (c, v) in centroids[s.label].iter_mut().zip(&f) {
                    *c += v;
                }
                counts[s.label] += 1;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        let (mut hit, mut total) = (0, 0);
        for (i, s) in seqs.iter().enumerate() {
            if !is_train(i) {
                let f = feat(s);
                let best = centroids
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let da: f64 = a.iter().zip(&f).map(|(x, y)| (x - y) * (x - y)).sum();
                        let db: f64 = b.iter().zip(&f).map(|(x, y)| (x - y) * (x - y)).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                if best == s.label {
                    hit += 1;
                }
                total += 1;
            }
        }
        let acc = hit as f64 / total as f64;
        assert!(acc > 0.5, "nearest-centroid accuracy {acc} not above chance 0.25");
    }

    #[test]
    fn sequence_file_round_trips_bitwise() {
        let bundle = SkeletonBundle::builtin("kinetics18").unwrap();
        let (_, seqs) = synth_dataset(&SynthSpec::new(2, 1, 5, 3), &bundle).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.seq");
        save_sequence(&path, &seqs[0]).unwrap();
        let loaded = load_sequence(&path).unwrap();
        assert_eq!(loaded.label, seqs[0].label);
        assert_eq!(loaded.mode, seqs[0].mode);
        assert_eq!(loaded.data.shape(), seqs[0].data.shape());
        for (a, b) in loaded.data.data().iter().zip(seqs[0].data.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // save -> load -> save yields identical bytes
        let path2 = dir.path().join("s2.seq");
        save_sequence(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_sequence_file_is_a_decode_error() {
        let bundle = SkeletonBundle::builtin("kinetics18").unwrap();
        let (_, seqs) = synth_dataset(&SynthSpec::new(2, 1, 5, 3), &bundle).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.seq");
        save_sequence(&path, &seqs[0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_sequence(&path), Err(DataError::BadFile(_))));
        // and a wrong version is its own error
        let mut garbled = bytes.clone();
        garbled[8] = 9;
        std::fs::write(&path, &garbled).unwrap();
        assert!(matches!(load_sequence(&path), Err(DataError::VersionMismatch { .. })));
    }

    #[test]
    fn dataset_reader_streams_from_manifest_only() {
        let bundle = SkeletonBundle::builtin("kinetics18").unwrap();
        let (manifest, seqs) = synth_dataset(&SynthSpec::new(2, 3, 4, 1), &bundle).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &manifest, &seqs).unwrap();
        // delete one sample file: open still succeeds (manifest only),
        // loading that sample fails, loading the others works
        std::fs::remove_file(dir.path().join(&manifest.samples[4].path)).unwrap();
        let reader = DatasetReader::open(dir.path()).unwrap();
        assert_eq!(reader.len(), 6);
        assert!(reader.load(0).is_ok());
        assert!(reader.load(4).is_err());
        let loaded: Vec<_> = reader.iter().filter_map(Result::ok).collect();
        assert_eq!(loaded.len(), 5);
    }

    #[test]
    fn manifest_round_trips_and_validates() {
        let m = DatasetManifest {
            mode: Mode::Ntu3d,
            topology: "ntu25".into(),
            class_names: vec!["a".into(), "b".into()],
            samples: vec![SampleRecord { path: "x.seq".into(), label: 1, frames: 9 }],
        };
        let parsed = DatasetManifest::parse(&m.to_text()).unwrap();
        assert_eq!(m, parsed);
        assert!(DatasetManifest::parse("format sequence-manifest\nversion 1\n").is_err());
        let bad_label = m.to_text().replace("x.seq 1 9", "x.seq 7 9");
        assert!(DatasetManifest::parse(&bad_label).is_err());
    }
}
