//! Contrast scoring and easy-to-difficult staging of the training pool.
//!
//! A patch's score is the mean absolute deviation of its samples from the
//! patch mean. Stage `i` admits every pair whose score is at least
//! `lambda_i` times the mean score of the whole pool, so high-contrast
//! (edge-like) patches come first and later stages add flatter ones.

use std::fmt::Write;

use crate::data::patches::PatchPair;
use crate::error::{GunError, Result};
use crate::plane::Plane;

pub const DEFAULT_LAMBDAS: [f64; 5] = [1.2, 1.0, 0.8, 0.5, 0.0];

/// Mean absolute deviation from the patch mean.
pub fn algd(patch: &Plane<f32>) -> f32 {
    let n = patch.data().len();
    if n == 0 {
        return 0.0;
    }
    let mean = patch.mean();
    let dev: f64 = patch.data().iter().map(|&g| (g as f64 - mean).abs()).sum();
    (dev / n as f64) as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub lambda: f64,
    /// Indices into the pair pool, ascending.
    pub indices: Vec<usize>,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumPlan {
    pub stages: Vec<Stage>,
    /// Mean score over the full pool.
    pub mean_algd: f64,
}

fn pool_mean(pairs: &[PatchPair]) -> f64 {
    // each f32 score is exact in f64, so a pool of equal scores averages
    // back to exactly that score
    pairs.iter().map(|p| p.algd as f64).sum::<f64>() / pairs.len() as f64
}

fn distribution(pairs: &[PatchPair]) -> (f64, f64, f64) {
    let min = pairs.iter().map(|p| p.algd as f64).fold(f64::INFINITY, f64::min);
    let max = pairs.iter().map(|p| p.algd as f64).fold(f64::NEG_INFINITY, f64::max);
    (min, pool_mean(pairs), max)
}

pub fn build_curriculum(pairs: &[PatchPair], lambdas: &[f64], epochs_per_stage: usize) -> Result<CurriculumPlan> {
    if pairs.is_empty() {
        return Err(GunError::InvalidArgument("curriculum needs at least one patch pair".into()));
    }
    if lambdas.is_empty() {
        return Err(GunError::InvalidArgument("curriculum needs at least one lambda".into()));
    }
    if let Some(w) = lambdas.windows(2).find(|w| !(w[0] > w[1])) {
        return Err(GunError::InvalidArgument(format!(
            "lambdas must be strictly decreasing, found {} then {}",
            w[0], w[1]
        )));
    }
    let mean = pool_mean(pairs);
    let mut stages = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let threshold = lambda * mean;
        let indices: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.algd as f64 >= threshold)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            let (min, avg, max) = distribution(pairs);
            return Err(GunError::EmptyStage {
                lambda,
                diagnostic: format!(
                    "no pair reaches score {threshold:.6} (pool of {}: min {min:.6}, mean {avg:.6}, max {max:.6})",
                    pairs.len()
                ),
            });
        }
        stages.push(Stage {
            lambda,
            indices,
            epochs: epochs_per_stage,
        });
    }
    Ok(CurriculumPlan { stages, mean_algd: mean })
}

impl CurriculumPlan {
    /// Plain-text table with one row per stage: lambda, count and the
    /// min/mean/max score of the stage.
    pub fn stats_table(&self, pairs: &[PatchPair]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# pool mean ALGD {:.6}", self.mean_algd);
        let _ = writeln!(out, "{:>8} {:>10} {:>10} {:>10} {:>10}", "lambda", "count", "min", "mean", "max");
        for s in &self.stages {
            let chosen: Vec<PatchPair> = s.indices.iter().map(|&i| pairs[i].clone()).collect();
            let (min, mean, max) = distribution(&chosen);
            let _ = writeln!(out, "{:>8} {:>10} {:>10.6} {:>10.6} {:>10.6}", s.lambda, s.indices.len(), min, mean, max);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(score: f32) -> PatchPair {
        PatchPair {
            lr: Plane::filled(1, 1, 0.0),
            hr: Plane::filled(2, 2, 0.0),
            algd: score,
            source: 0,
            offset: (0, 0),
        }
    }

    #[test]
    fn algd_examples() {
        assert_eq!(algd(&Plane::filled(3, 4, 0.3)), 0.0);
        let p = Plane::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(algd(&p), 0.5);
        let shifted = p.map(|v| v + 0.25);
        assert_eq!(algd(&shifted), 0.5);
    }

    #[test]
    fn zero_lambda_is_full_pool_and_stages_nest() {
        let pairs: Vec<_> = [0.0, 0.1, 0.4, 0.2, 0.9, 0.05].into_iter().map(pair).collect();
        let plan = build_curriculum(&pairs, &DEFAULT_LAMBDAS, 3).unwrap();
        assert_eq!(plan.stages.last().unwrap().indices, (0..6).collect::<Vec<_>>());
        for w in plan.stages.windows(2) {
            assert!(w[0].indices.iter().all(|i| w[1].indices.contains(i)));
        }
        assert!(plan.stages[0].indices.len() < plan.stages[4].indices.len());
        assert_eq!(plan.stats_table(&pairs).lines().count(), 2 + 5);
    }

    #[test]
    fn identical_scores_make_the_top_stage_empty() {
        let pairs: Vec<_> = (0..3).map(|_| pair(0.1)).collect();
        let plan = build_curriculum(&pairs, &[1.0, 0.0], 1).unwrap();
        assert_eq!(plan.stages[0].indices.len(), 3);
        let err = build_curriculum(&pairs, &DEFAULT_LAMBDAS, 1).unwrap_err();
        assert!(matches!(err, GunError::EmptyStage { lambda, .. } if lambda == 1.2));
    }

    #[test]
    fn rejects_bad_lambdas() {
        let pairs = vec![pair(0.3)];
        assert!(build_curriculum(&pairs, &[0.5, 0.8], 1).is_err());
        assert!(build_curriculum(&pairs, &[0.5, 0.5], 1).is_err());
        assert!(build_curriculum(&[], &[0.0], 1).is_err());
    }
}
