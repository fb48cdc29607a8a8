//! Graph convolutional encoder `z(x)` with a single linear classification head.

mod adjacency;
mod adam;
mod model;
mod train;

pub use adam::Adam;
pub use adjacency::{normalize_adjacency, NormAdjacency};
pub use model::{
    classify, encode_graph, EncoderConfig, EncoderParams, EpochStats, ForwardCache, Linear,
    PreparedGraph, Weights,
};
pub(crate) use model::{backward as model_backward, forward as model_forward};
pub use train::{
    batch_loss_and_grad, evaluate, softmax, train_classifier, Evaluation, BATCH_SIZE,
};
