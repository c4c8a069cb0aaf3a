//! Desk-scale layer-attention network: forward modes, analytic gradients
//! and a small trainer.

pub mod backward;
pub mod linalg;
pub mod network;
pub mod train;

pub use backward::{backward, softmax_cross_entropy, Gradients, ParamClass};
pub use linalg::Matrix;
pub use network::{
    ela_forward, mrla_b_forward, mrla_l_forward, AttentionMode, ForwardTrace, LayerParams, LayerStack, Qkv,
    StackGeometry,
};
pub use train::{train_toy, Dataset, DatasetSpec, TrainConfig, TrainReport};
