//! Step-wise super-resolution of luminance planes.
//!
//! A low-resolution luminance plane is magnified through many small bicubic
//! upsampling steps, each refined by a stack of convolutions, and the
//! network is trained on an easy-to-difficult curriculum ordered by patch
//! contrast.

pub mod conv;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod plane;
pub mod resample;
pub mod tensor;
pub mod train;

pub use conv::{conv2d_backward, conv2d_forward, he_init, relu_backward, relu_forward, ConvParams};
pub use error::{GunError, Result};
pub use layers::{bn_backward, bn_forward, BackwardResample, BatchNormState, LayerKind, Mode};
pub use metrics::{bicubic_baseline, psnr, ssim, MetricsReport};
pub use network::{build_gun, GunModel, GunTopology, Magnification, ResolutionSchedule};
pub use plane::Plane;
pub use resample::{bicubic_adjoint, bicubic_resize, degrade, keys_kernel, ResamplePlan};
pub use tensor::{Scalar, Shape, Tensor};
pub use train::{mse_loss, sgd_momentum_step, OptimState, TrainConfig, TrainReport, Trainer, ValidationSet};
