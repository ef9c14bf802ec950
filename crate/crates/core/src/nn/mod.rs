//! A small neural-network engine: 1-D convolution, max pooling, dense
//! layers, dropout, exact backpropagation, He initialization and Adam.

pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use layers::{he_initialize, relu, relu_grad, sigmoid, Activation, Conv1d, Dense, Dropout, Layer, LayerSpec, MaxPool1d, ParamGrad};
pub use network::{bce_loss, ForwardPass, Gradients, Network};
pub use optim::{adam_update, AdamConfig, AdamState, Optimizer, OptimizerSpec, SgdConfig};
pub use tensor::Tensor;
pub use train::{accuracy, train, validation_split, EpochMetrics, TrainConfig, TrainReport};
