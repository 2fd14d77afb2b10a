//! The heterogeneous reconstruction network: a fixed coded-mask channel split,
//! a learned spectral reconstruction and decoder, and four residual refinement
//! blocks.

pub mod arch;
mod balance;
mod checkpoint;
pub mod gradcheck;
pub mod masks;
mod network;
mod params;

pub use arch::{LayerKind, LayerSpec, ARCHITECTURE};
pub use balance::{balance_channels, channel_rms, DEFAULT_BALANCE};
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, read_tap, save_checkpoint,
    tap_from_bytes, tap_to_bytes, write_tap, TapDump, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
    TAP_MAGIC,
};
pub use masks::{build_masks, channel_extract, channel_extract_backward, CodedMaskBank};
pub use network::{
    backward, forward, forward_train, reconstruct, ActivationTaps, ForwardCache, Gradients,
};
pub use params::{
    init_params, param_count, rescalable, InitScheme, LayerParams, ModelParams, ParamCount,
    ParamGrads,
};
