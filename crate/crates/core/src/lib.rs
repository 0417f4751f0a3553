//! Hardware-aware, bundle-based neural architecture search at desk scale.
//!
//! The crate covers the whole flow: a small dense-tensor engine with
//! gradients for depthwise-separable detection networks ([`kernels`],
//! [`tape`], [`model`], [`train`]), bundle genomes ([`genome`]),
//! group-based particle swarm search ([`search`]), analytic FPGA/GPU cost
//! models ([`hw`]), fixed-point quantization with batch-norm folding
//! ([`quant`]), synthetic detection data ([`data`]) and contest scoring
//! ([`scoring`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod genome;
pub mod head;
pub mod hw;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod quant;
pub mod scoring;
pub mod search;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use genome::{
    instantiate, macs_count, param_count, Activation, Bundle, Bypass, FeatureShape, GenomeBounds, LayerKind,
    LayerOp, LayerSpec, NetworkGenome, NetworkSpec, ReferenceVariant, WidthAlphabet,
};
pub use head::{Anchor, Detection};
pub use hw::{FpgaTarget, GpuTarget, HwEstimate, TilingPlan};
pub use model::Network;
pub use quant::QuantScheme;
pub use scoring::BoundingBox;
pub use tensor::Tensor;
