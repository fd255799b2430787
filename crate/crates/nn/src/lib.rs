//! Residual convolutional networks on the CPU, with hand-written backward
//! passes.
//!
//! Feature maps are channel-major (`[C, N, H, W]`) so convolutions lower to
//! a single GEMM. Networks are generic over `f32` (training) and `f64`
//! (gradient checking).

pub mod block;
pub mod float;
pub mod layers;
pub mod optim;
pub mod resnet;
pub mod tensor;

pub use block::{BlockKind, ResidualBlock};
pub use float::Float;
pub use optim::{Optimizer, OptimizerKind};
pub use resnet::{unit_of, ResNet, ResNetConfig, HEAD_UNIT, STEM_UNIT};
pub use tensor::{Feat, Mat, Param};
