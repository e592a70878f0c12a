//! Parameterised layers, attention blocks and the AdamW/StepLR recipe.

mod attention;
pub mod init;
mod layers;
mod optim;
mod params;

pub use attention::{Mha, TransformerBlock, FFN_EXPANSION};
pub use layers::{BatchNorm2d, Builder, Conv2d, ConvBnRelu, LayerNorm, Linear, BN_EPS, BN_MOMENTUM, LN_EPS};
pub use optim::{AdamW, StepLr};
pub use params::{collect_grads, EntryKind, Mode, ParamId, ParamStore, Session};
