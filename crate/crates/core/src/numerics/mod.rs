//! Dense tensors, reverse-mode differentiation, MLPs, the optimizer and the
//! DCT that the model is built from.

mod autodiff;
pub mod dct;
mod gradcheck;
mod mlp;
mod optim;
mod params;
mod tensor;

pub use autodiff::{Gradients, Graph, Var};
pub use dct::{dct, dct_matrix, idct, idct_matrix};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_FLOOR};
pub use mlp::{mlp_apply, silu, MlpSpec, Mode};
pub use optim::AdamW;
pub use params::{Param, ParamStore};
pub use tensor::Tensor;
