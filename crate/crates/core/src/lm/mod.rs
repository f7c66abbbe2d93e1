//! Byte-level toy decoder-only transformer: config, parameters, forward and
//! backward passes, training loop and greedy decoding.

mod model;
mod params;
mod train;

pub use model::{
    forward, forward_cached, generate, generate_with_logprobs, log_softmax_row, loss,
    loss_and_grad, ForwardCache, Token, LN_EPS,
};
pub use params::{LayerParams, ModelConfig, ModelParams, Scalar, Tensor, INIT_STD};
pub use train::{train, TrainConfig, CONFIG_FILE};
