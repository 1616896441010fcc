//! Self-contained neural network kernel: tensors, layer primitives,
//! reverse-mode differentiation, Adam, and finite-difference gradient
//! verification. Everything is `f64`; no external numeric crates.

pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod network;
pub mod ops;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, ProbePlan};
pub use init::{glorot_uniform, he_uniform};
pub use network::{ForwardCache, Gradients, Network, StageOp};
pub use ops::cross_entropy;
pub use tensor::Tensor;
