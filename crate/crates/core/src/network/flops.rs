//! Operation-count model of a forward pass.
//!
//! Counts multiply-accumulates: the input layer costs `f^2 q` per LR pixel,
//! each step costs `sum_l p_l f_l^2 q_l` per pixel of that step's maps, and
//! the output layer costs `p f^2` per HR pixel.

use crate::error::Result;
use crate::network::schedule::resolution_schedule;
use crate::network::topology::GunTopology;

/// Multiply-accumulates of one step's convolutions per pixel.
fn step_cost_per_pixel(topology: &GunTopology) -> u64 {
    let c = topology.channels as u64;
    topology
        .step_kinds()
        .map(|k| {
            let f = k.kernel().expect("conv kind") as u64;
            c * f * f * c
        })
        .sum()
}

fn area(size: (usize, usize)) -> u64 {
    (size.0 * size.1) as u64
}

/// Estimated forward cost of a gradual network mapping `lr` to `hr`.
///
/// A topology with zero steps is accepted and counts only the input and
/// output layers.
pub fn flops_estimate(topology: &GunTopology, lr: (usize, usize), hr: (usize, usize)) -> Result<u64> {
    let c = topology.channels as u64;
    let input = 9 * c * area(lr);
    let output = c * 9 * area(hr);
    if topology.steps == 0 {
        return Ok(input + output);
    }
    let schedule = resolution_schedule(lr, hr, topology.steps)?;
    let per_pixel = step_cost_per_pixel(topology);
    let steps: u64 = schedule.targets().iter().map(|&t| per_pixel * area(t)).sum();
    Ok(input + steps + output)
}

/// Cost of the same layer list when every layer runs at HR resolution, as
/// in networks that interpolate the input to full size first.
pub fn flops_direct(topology: &GunTopology, hr: (usize, usize)) -> u64 {
    let c = topology.channels as u64;
    let s = area(hr);
    9 * c * s + topology.steps as u64 * step_cost_per_pixel(topology) * s + c * 9 * s
}
