//! The searchable super-resolution network: masked residual blocks with
//! skip/compute path selection, and the compact model extracted from it.

mod block;
mod compact;
mod model;

pub use block::{
    adaptive_block_forward, binarize_mask, effective_widths_node, gated_conv, masked_conv_forward, AdaptiveSRBlock,
    BlockConfig, BlockIds, BlockTrace, FreeGates, MaskLayer, MaskedConv, MaskedConvIds, MaskedSRBlock,
};
pub use compact::{extract_architecture, ArchitectureSummary, BlockSummary, CompactBlock, CompactIds, CompactModel};
pub use model::{ModelTrace, ParamKind, SkipInit, SupernetConfig, SupernetIds, SupernetModel, CHECKPOINT_VERSION};
