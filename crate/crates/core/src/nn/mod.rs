//! Minimal reverse-mode autodiff engine and layers used by the model stack.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod tape;

pub use layers::{
    key_mask_bias, normal_init, xavier_uniform, CrossBlock, LayerNorm, Linear, Mlp2,
    MultiHeadAttention, ParamStore, TransformerBlock,
};
pub use optim::{AdamW, LrSchedule};
pub use tape::{Arr, Tape, Tx};
