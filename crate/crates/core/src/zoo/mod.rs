//! Architectures and their composition: VGG9, ResNet20, the DNN head,
//! proportional local scaling, coherent CNN-DNN assembly, and channel
//! decomposition with zero cross-coupling.

mod build;
mod compose;
mod graph;
mod scale;

pub use build::{build_dnn_head, build_resnet20, build_vgg9, DNN_HEAD_HIDDEN};
pub use compose::{
    assemble_cnn_dnn, assemble_dd_global, channel_decompose, BlockCopy, BlockKind,
    ChannelDecomposition, ReassemblyMap,
};
pub use graph::{Layer, NetworkGraph, ParamSet, Src};
pub use scale::scale_local;
