//! Minimal differentiable tensor machinery used by the denoiser and trainer.

pub mod graph;
pub mod params;

pub use graph::{eps_loss_parts, smooth_l1, Activation, ConvGeom, EpsLossParts, Graph, ParamGrads, Tensor, Var};
pub use params::{AdamConfig, AdamState, ParamId, ParamStore, ParamTensor};
