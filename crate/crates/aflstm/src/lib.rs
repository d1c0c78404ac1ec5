//! Word-aspect fusion attention for aspect-based sentiment analysis,
//! built from first principles: circular convolution/correlation with FFT
//! acceleration and analytic gradients, a minimal reverse-mode autodiff
//! tape, a holographic associative-memory demo, the model family
//! (majority / NBOW / LSTM / AT-LSTM / ATAE-LSTM / AF-LSTM), and a
//! deterministic training and evaluation harness.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod holo;
pub mod hrr;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
