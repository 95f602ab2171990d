//! The assembled network: resolution schedule, topology, forward/backward,
//! cost model and checkpoints.

pub mod checkpoint;
pub mod flops;
pub mod model;
pub mod schedule;
pub mod topology;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use flops::{flops_direct, flops_estimate};
pub use model::{build_gun, gun_backward, gun_forward, ConvBlock, ForwardCache, Gradients, GunModel, ParamMut};
pub use schedule::{resolution_schedule, ResolutionSchedule};
pub use topology::{default_patch_size, default_steps, GunTopology, Magnification, DEFAULT_CHANNELS, DEFAULT_DEPTH};
