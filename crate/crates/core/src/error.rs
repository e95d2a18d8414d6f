//! Error types for the crate, one enum per subsystem.

use thiserror::Error;

/// Skeleton topology construction and query failures.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown topology name '{0}' (built-ins: kinetics18, ntu25)")]
    UnknownName(String),
    #[error("bone ({a}, {b}) duplicates an earlier bone")]
    DuplicateBone { a: usize, b: usize },
    #[error("bone ({a}, {b}) connects a joint to itself")]
    SelfLoopBone { a: usize, b: usize },
    #[error("joint index {joint} out of range for {num_joints} joints")]
    JointOutOfRange { joint: usize, num_joints: usize },
    #[error("bone graph is not connected")]
    Disconnected,
    #[error("edge index {edge} out of range for {num_edges} edges")]
    EdgeOutOfRange { edge: usize, num_edges: usize },
    #[error("pose has {got} joints, topology has {want}")]
    JointCountMismatch { got: usize, want: usize },
    #[error("pose coordinates are {got}-dimensional, expected {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("pose has no joints")]
    EmptyPose,
    #[error("label table is missing entry for root {root}, neighbor {neighbor}")]
    MissingLabel { root: usize, neighbor: usize },
    #[error("topology file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tensor and autograd failures.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad shape: {what}")]
    BadShape { what: String },
    #[error("shape mismatch in {what}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { what: String, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("axis {axis} out of range for {ndim} dims")]
    AxisOutOfRange { axis: usize, ndim: usize },
    #[error("temporal kernel size {kt} must be odd")]
    EvenKernel { kt: usize },
    #[error("temporal kernel size {kt} exceeds padded extent {extent}")]
    KernelTooLong { kt: usize, extent: usize },
    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("loss function is not deterministic: {a} vs {b} on repeated evaluation")]
    NonDeterministic { a: f64, b: f64 },
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
    #[error("checkpoint file: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sequence data, file formats, and the synthetic generator.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("sequence has {got} {kind}, topology has {want}")]
    CountMismatch { kind: &'static str, got: usize, want: usize },
    #[error("sequence mode {got:?} does not match expected {want:?}")]
    ModeMismatch { got: crate::features::Mode, want: crate::features::Mode },
    #[error("need at least {min} {what}, got {got}")]
    BadCount { what: &'static str, min: usize, got: usize },
    #[error("sequence file: {0}")]
    BadFile(String),
    #[error("sequence file schema version {got} is not supported (want {want})")]
    VersionMismatch { got: u32, want: u32 },
    #[error("manifest: {0}")]
    BadManifest(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Layer construction and evaluation failures.
#[derive(Debug, Error)]
pub enum LayerError {
    #[error("input has {got} spatial slots, partition has {want}")]
    SpatialMismatch { got: usize, want: usize },
    #[error("channel mismatch: {what} ({got} vs {want})")]
    ChannelMismatch { what: &'static str, got: usize, want: usize },
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("direct-path instance too large: {elements} element-ops exceeds guard {guard}")]
    InstanceTooLarge { elements: usize, guard: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Model assembly and forward failures.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("model expects {want} input channels, batch has {got}")]
    InputChannelMismatch { got: usize, want: usize },
    #[error("edge and node streams disagree on output channels: {edge} vs {node}")]
    StreamChannelMismatch { edge: usize, node: usize },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Training loop failures.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("top-{k} requested with only {classes} classes")]
    TopKOutOfRange { k: usize, classes: usize },
    #[error("temporal kernel size {0} must be odd")]
    EvenKernelSize(usize),
    #[error("learning rate must be > 0, got {0}")]
    BadLearningRate(f64),
    #[error("batch size must be >= 1")]
    BadBatchSize,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
