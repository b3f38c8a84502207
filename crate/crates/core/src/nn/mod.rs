//! Minimal CPU neural-network engine.
//!
//! Fixed layer set, explicit graphs, exact backpropagation, f64 throughout.
//! No autograd: each layer implements its own adjoint, and the test suite
//! holds every one of them to central finite differences.

pub mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use graph::Graph;
pub use layers::{
    BatchNorm, ChannelAttention, Conv2d, Dense, Dropout, GlobalAvgPool, Layer, MaxPool, Relu,
    Softmax,
};
pub use loss::softmax_cross_entropy;
pub use optim::{cosine_restart_lr, sgd_update, SgdMomentum, TrainConfig};
pub use tensor::Tensor;
