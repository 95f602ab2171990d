use crate::error::{GunError, Result};

/// Per-step target sizes of the upsampling layers.
///
/// Step `i < N` grows the LR size by `i * delta` with
/// `delta = floor((HR - LR) / N)` per axis; step `N` is pinned to the HR
/// size so the output always matches the target exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionSchedule {
    lr: (usize, usize),
    hr: (usize, usize),
    targets: Vec<(usize, usize)>,
}

impl ResolutionSchedule {
    pub fn lr(&self) -> (usize, usize) {
        self.lr
    }

    pub fn hr(&self) -> (usize, usize) {
        self.hr
    }

    pub fn steps(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[(usize, usize)] {
        &self.targets
    }

    /// Per-axis increment of the intermediate steps.
    pub fn delta(&self) -> (usize, usize) {
        let n = self.targets.len();
        ((self.hr.0 - self.lr.0) / n, (self.hr.1 - self.lr.1) / n)
    }
}

pub fn resolution_schedule(lr: (usize, usize), hr: (usize, usize), steps: usize) -> Result<ResolutionSchedule> {
    if steps == 0 {
        return Err(GunError::InvalidArgument("schedule needs at least one step".into()));
    }
    if lr.0 == 0 || lr.1 == 0 {
        return Err(GunError::InvalidArgument(format!("empty LR size {}x{}", lr.0, lr.1)));
    }
    if hr.0 < lr.0 || hr.1 < lr.1 {
        return Err(GunError::InvalidArgument(format!(
            "HR size {}x{} is smaller than LR size {}x{}",
            hr.0, hr.1, lr.0, lr.1
        )));
    }
    let dm = (hr.0 - lr.0) / steps;
    let dn = (hr.1 - lr.1) / steps;
    let mut targets: Vec<_> = (1..steps).map(|i| (lr.0 + i * dm, lr.1 + i * dn)).collect();
    targets.push(hr);
    Ok(ResolutionSchedule { lr, hr, targets })
}
