//! Minimal differentiable convolutional substrate: build, run, and
//! differentiate the small networks used across the pipeline, plus the
//! scalar ReLU chain with its closed-form gradient.

pub mod chain;
pub mod checkpoint;
pub mod net;
pub mod optim;
pub mod spec;

pub use chain::ScalarReluChain;
pub use checkpoint::{load_params, save_params};
pub use net::{build_net, NetHandle, Tape};
pub use optim::{adam_step, OptimState};
pub use spec::{Activation, ConvLayer, NetSpec, Skip, SkipFrom};
