//! Dense and convolutional networks with hand-written backpropagation.

mod adam;
mod model;
mod network;
mod spec;
mod tensor;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use model::{load_weights, one_hot, verdict, InputTransform, Model, WEIGHTS_FORMAT};
pub use network::{activations, backward, forward, forward_batch, loss_l1, Affine, Parameters, CHUNK};
pub use spec::{
    build_cnn, build_fcnn, build_fcnn_onboard, build_linear, Extent, Layer, NetworkSpec,
    FCNN_HIDDEN,
};
pub use tensor::Tensor;
pub use train::{train, LogEntry, TrainConfig, TrainOutcome};
