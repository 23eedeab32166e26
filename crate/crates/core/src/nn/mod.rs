//! Minimal dense-network substrate: tensors, split feed-forward networks,
//! explicit backward passes, losses and optimisers.

mod loss;
mod network;
mod optim;
mod tensor;

pub use loss::{mean_squared_error, softmax, softmax_cross_entropy};
pub use network::{
    accuracy, accuracy_layers, argmax, backward, backward_layers, forward_classifier,
    forward_extractor, forward_full, forward_layers, stack_widths, Affine, ForwardCache, Layer,
    NetworkSpec, Parameters,
};
pub use optim::{adam_step, AdamConfig, AdamState, Optimizer, OptimizerKind};
pub use tensor::Tensor;
