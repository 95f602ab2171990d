use std::fmt;

use crate::error::{GunError, Result};
use crate::layers::{BackwardResample, LayerKind};
use crate::network::schedule::{resolution_schedule, ResolutionSchedule};

/// How output sizes are derived from input sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Magnification {
    /// Output is `input * num / den` (rounded down) per axis.
    Ratio { num: u32, den: u32 },
    /// A model for one fixed LR size and one fixed HR size.
    Explicit { lr: (u32, u32), hr: (u32, u32) },
}

impl Magnification {
    pub fn scale(s: u32) -> Self {
        Magnification::Ratio { num: s, den: 1 }
    }

    /// Integer scale factor, when the magnification is one.
    pub fn integer_scale(&self) -> Option<u32> {
        match *self {
            Magnification::Ratio { num, den } if den != 0 && num % den == 0 => Some(num / den),
            _ => None,
        }
    }

    /// HR size produced for an LR input of size `lr`.
    pub fn target_for(&self, lr: (usize, usize)) -> Result<(usize, usize)> {
        match *self {
            Magnification::Ratio { num, den } => {
                let f = |v: usize| v * num as usize / den as usize;
                Ok((f(lr.0), f(lr.1)))
            }
            Magnification::Explicit { lr: l, hr } => {
                if (l.0 as usize, l.1 as usize) != lr {
                    return Err(GunError::InvalidArgument(format!(
                        "model expects {}x{} input, got {}x{}",
                        l.0, l.1, lr.0, lr.1
                    )));
                }
                Ok((hr.0 as usize, hr.1 as usize))
            }
        }
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Magnification::Ratio { num, den: 1 } => write!(f, "{num}x"),
            Magnification::Ratio { num, den } => write!(f, "{num}/{den}x"),
            Magnification::Explicit { lr, hr } => write!(f, "{}x{} -> {}x{}", lr.0, lr.1, hr.0, hr.1),
        }
    }
}

/// Step/layer structure of a gradual upsampling network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GunTopology {
    pub magnification: Magnification,
    /// Number of upsampling steps.
    pub steps: usize,
    /// Convolutions per step: `depth - 1` 3x3 blocks then one 1x1 block.
    pub depth: usize,
    pub channels: usize,
    pub bn_on_input: bool,
    pub backward_resample: BackwardResample,
}

pub const DEFAULT_DEPTH: usize = 4;
pub const DEFAULT_CHANNELS: usize = 64;

/// Default step count for an integer scale factor.
pub fn default_steps(scale: u32) -> usize {
    match scale {
        2 => 5,
        3 => 8,
        4 => 9,
        // not covered by the defaults; grow roughly like the known cases
        s => (2 * s as usize + 1).max(1),
    }
}

/// Default LR training patch side for an integer scale factor.
pub fn default_patch_size(scale: u32) -> usize {
    match scale {
        2 => 20,
        3 => 16,
        _ => 12,
    }
}

impl GunTopology {
    /// Defaults for an integer scale factor.
    pub fn for_scale(scale: u32) -> Self {
        GunTopology {
            magnification: Magnification::scale(scale),
            steps: default_steps(scale),
            depth: DEFAULT_DEPTH,
            channels: DEFAULT_CHANNELS,
            bn_on_input: true,
            backward_resample: BackwardResample::Adjoint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(GunError::InvalidArgument("topology needs at least one step".into()));
        }
        if self.depth == 0 {
            return Err(GunError::InvalidArgument("depth per step must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(GunError::InvalidArgument("channel count must be positive".into()));
        }
        match self.magnification {
            Magnification::Ratio { num, den } if den == 0 || num < den => Err(GunError::InvalidArgument(format!(
                "magnification {num}/{den} must be a ratio >= 1"
            ))),
            Magnification::Explicit { lr, hr } if hr.0 < lr.0 || hr.1 < lr.1 || lr.0 == 0 || lr.1 == 0 => {
                Err(GunError::InvalidArgument(format!("explicit sizes {lr:?} -> {hr:?} do not grow")))
            }
            _ => Ok(()),
        }
    }

    /// Schedule for an LR input of the given size.
    pub fn schedule_for(&self, lr: (usize, usize)) -> Result<ResolutionSchedule> {
        resolution_schedule(lr, self.magnification.target_for(lr)?, self.steps)
    }

    /// Number of convolution layers (input + steps + output).
    pub fn conv_layers(&self) -> usize {
        2 + self.steps * self.depth
    }

    /// Kinds of the convolutions of one step, in order.
    pub fn step_kinds(&self) -> impl Iterator<Item = LayerKind> {
        let d = self.depth;
        (0..d).map(move |l| if l + 1 == d { LayerKind::StepConv1 } else { LayerKind::StepConv3 })
    }

    /// Full layer sequence for a given schedule.
    pub fn layers(&self, schedule: &ResolutionSchedule) -> Vec<LayerKind> {
        let mut out = vec![LayerKind::InputConv];
        for &(h, w) in schedule.targets() {
            out.push(LayerKind::Upsample { h, w });
            out.extend(self.step_kinds());
        }
        out.push(LayerKind::OutputConv);
        out
    }
}
