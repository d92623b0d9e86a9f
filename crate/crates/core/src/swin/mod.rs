//! Video Swin Transformer visual branch.

pub mod config;
pub mod layers;
pub mod model;
pub mod params;

pub use config::{ModelConfig, Preset, StagePlan};
pub use layers::{
    cyclic_shift, patch_embed, patch_merging, shift_mask, swin_block_pair, window_attention, window_partition,
    window_reverse, AttentionWeights,
};
pub use model::{AttentionRecord, ForwardOutput, SwinModel};
pub use params::{param_specs, Bound, ParamStore};
