//! Dynamic local and global self-attention networks for single-image
//! super-resolution, on a small self-contained NCHW autodiff engine.

pub mod analysis;
pub mod check;
pub mod error;
pub mod image;
pub mod layers;
pub mod mhdlsa;
pub mod network;
pub mod params;
pub mod sparsegsa;
pub mod tensor;
pub mod train;
pub mod window;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Graph, PadMode, Scalar, Shape, Tensor, Var};
pub use network::{build_model, model_forward, BlockVariant, DlgsaNet, ModelConfig};
pub use params::{Bindings, Init, ParamStore, Scope};
