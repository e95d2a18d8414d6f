//! Graph edge convolution over human-skeleton graphs.
//!
//! Skeleton sequences carry joint coordinates; this crate re-expresses them
//! as bone features and runs convolutions over the bones (graph edges)
//! rather than the joints. It provides:
//!
//! * skeleton topologies with the edge-distance metric, gravity-center
//!   labeling, and normalized per-label adjacency operators ([`skeleton`]);
//! * the joint-to-bone feature transform, a synthetic labeled dataset
//!   generator, and the sequence file format ([`features`]);
//! * a dense `f64` tensor with reverse-mode differentiation ([`tensor`],
//!   [`tape`], [`nn`]);
//! * edge, node, and shared node/edge convolution layers, each paired with
//!   a direct-summation oracle that certifies the fast path ([`layers`]);
//! * the GECNN classifier, its node-convolution counterpart, and the two
//!   hybrid fusion models ([`models`]);
//! * a deterministic training loop, evaluation metrics, and the
//!   temporal-kernel ablation runner ([`training`]).
//!
//! Everything is deterministic given a seed: random choices flow through
//! named streams in [`rng`].

pub mod error;
pub mod features;
pub mod layers;
pub mod models;
pub mod nn;
pub mod rng;
pub mod skeleton;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{DataError, GraphError, LayerError, ModelError, TensorError, TrainError};
pub use tensor::Tensor;
