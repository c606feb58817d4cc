//! Minimal CPU neural-network kernels for image-to-image GANs.
//!
//! Tensors are dense `f32` NCHW buffers. Every layer has an explicit
//! forward pass that records what its backward pass needs, and a backward
//! pass that returns input gradients plus parameter gradients in a fixed
//! order. Work is split over the batch dimension; with the `parallel`
//! feature that split runs on rayon, otherwise it runs sequentially. Both
//! paths reduce parameter gradients in sample order, so results are
//! bit-identical between them.

pub mod conv;
pub mod error;
pub mod exec;
pub mod gemm;
pub mod init;
pub mod layer;
pub mod norm;
pub mod ops;
pub mod optim;
pub mod pool;
pub mod tensor;

pub use conv::{Conv2d, ConvTranspose2d, PadMode};
pub use error::{NnError, Result};
pub use layer::{Cache, Layer, Mode, Sequential};
pub use optim::{Adam, AdamState};
pub use tensor::Tensor;
