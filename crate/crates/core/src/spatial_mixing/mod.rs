//! Spatial mixing: adaptive decay, key/value/receptance projections, patch
//! slicing, the recursive weighted key-value scan and the gated residual.

pub mod block;
pub mod patches;
pub mod scan;

pub use block::{
    adm_decay, apply_key_map, project_kvr, spatial_block_forward, BlockCache, BlockOptions,
    DecayMode, KeyMap, SpatialBlockParams, KEY_EXP_CAP,
};
pub use patches::{slice_patches, unslice_patches, PatchSequence};
pub use scan::{
    clamp_den, wkv_scan, wkv_scan_backward, wkv_scan_cached, InitMode, ScanCache, ScanGrads,
    ScanState, EPS_DEN,
};
