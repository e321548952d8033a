pub mod ablation;
pub mod attention;
pub mod autograd;
pub mod blocks;
pub mod cost;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod hazegen;
pub mod io;
pub mod kv;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod training;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use network::{DensityMap, HazeNet, ModelConfig, ModelOutput};
pub use params::{Init, ParamBuilder, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
