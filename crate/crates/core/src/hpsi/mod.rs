//! Hierarchical progressive aggregation of clip tokens.
//!
//! Each clip's visual tokens are summarised by three levels of aggregation
//! tokens (row counts `3:2:1` times `N_vc`) which are spliced into a decoder
//! at the first layer of each third of its depth. A structured sparse mask
//! routes information from raw tokens to level 1, level 1 to level 2, and so
//! on, so that text positions only need the last level plus each clip's
//! first-frame anchor.

mod decoder;
mod dump;
mod layout;
mod mask;
mod objective;
mod pool;
mod position;
mod schedule;

pub use decoder::{CarriedState, ClipMemory, DecoderInput, DecoderOutput, LayerTrace, ToyDecoder};
pub use dump::{LayoutDump, MaskDump, PositionDump, SegmentDump};
pub use layout::{build_layout, ClipSpan, Segment, SegmentKind, SequenceLayout};
pub use mask::{build_mask, AttentionMask, MaskOptions};
pub use objective::{integration_loss, integration_loss_grad, LayerAggregates};
pub use pool::{adapter_pool, adapter_pool_adjoint, init_aggregation_tokens, pool_segments};
pub use position::{
    build_position_ids, extended_grid, PositionGrid3D, PositionParams, SequencePositions,
    TokenPosition, VideoGrid,
};
pub use schedule::{compression_ratio, insertion_level, AggregationSchedule};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpsiError {
    #[error("size error: {0}")]
    Size(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite hidden state at layer {layer}")]
    NonFinite { layer: usize },
    #[error("invalid schedule: {0}")]
    Config(String),
    #[error("carried state does not match this call: {0}")]
    StateMismatch(String),
}
