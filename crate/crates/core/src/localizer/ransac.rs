//! P3P RANSAC with pluggable minimal-sample selection.

use rand::Rng;

use crate::geometry::{project, refine_pnp, solve_p3p, CameraIntrinsics, Correspondence, Pose};

use super::sampler::WeightedSampler;

#[derive(Debug, Clone)]
pub struct RansacOutcome {
    pub pose: Pose,
    pub inliers: Vec<usize>,
    pub hypotheses: usize,
}

/// Indices of correspondences that reproject within `threshold` pixels.
pub fn inlier_set(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    pose: &Pose,
    threshold: f64,
) -> Vec<usize> {
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            project(pose, k, &c.point).is_some_and(|px| (px - c.pixel).norm() <= threshold)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Hypotheses needed to draw one all-inlier triple with probability
/// `confidence` given inlier ratio `w`.
pub fn adaptive_bound(confidence: f64, w: f64) -> f64 {
    if w <= 0.0 {
        return f64::INFINITY;
    }
    let p = w.powi(3);
    if p >= 1.0 {
        return 0.0;
    }
    ((1.0 - confidence).ln() / (1.0 - p).ln()).ceil()
}

pub enum Schedule {
    Fixed(usize),
    Adaptive { confidence: f64, max_iters: usize },
}

/// Runs hypotheses from `sample` until the schedule is exhausted, then
/// refines the best pose on its inliers. `None` when fewer than four
/// inliers are found.
pub fn p3p_ransac<R: Rng + ?Sized>(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    threshold: f64,
    schedule: Schedule,
    rng: &mut R,
    mut sample: impl FnMut(&mut R) -> [usize; 3],
) -> Option<RansacOutcome> {
    if corrs.len() < 4 {
        return None;
    }
    let n = corrs.len() as f64;
    let mut best: Option<(Pose, Vec<usize>)> = None;
    let mut iters = 0usize;
    loop {
        let limit = match schedule {
            Schedule::Fixed(m) => m,
            Schedule::Adaptive {
                confidence,
                max_iters,
            } => {
                let w = best.as_ref().map_or(0.0, |b| b.1.len() as f64 / n);
                let bound = adaptive_bound(confidence, w);
                if bound < max_iters as f64 {
                    bound as usize
                } else {
                    max_iters
                }
            }
        };
        if iters >= limit {
            break;
        }
        iters += 1;
        let idx = sample(rng);
        let triple = [corrs[idx[0]], corrs[idx[1]], corrs[idx[2]]];
        let Ok(poses) = solve_p3p(&triple, k) else {
            continue;
        };
        for pose in poses {
            let inl = inlier_set(corrs, k, &pose, threshold);
            if best.as_ref().is_none_or(|b| inl.len() > b.1.len()) {
                best = Some((pose, inl));
            }
        }
    }

    let (pose, inliers) = best?;
    if inliers.len() < 4 {
        return None;
    }
    let subset: Vec<Correspondence> = inliers.iter().map(|&i| corrs[i]).collect();
    let refined = refine_pnp(&subset, k, &pose).unwrap_or(pose);
    let refined_inliers = inlier_set(corrs, k, &refined, threshold);
    let (pose, inliers) = if refined_inliers.len() >= inliers.len() {
        (refined, refined_inliers)
    } else {
        (pose, inliers)
    };
    Some(RansacOutcome {
        pose,
        inliers,
        hypotheses: iters,
    })
}

/// Uniform minimal samples, a fixed number of hypotheses.
pub fn uniform_ransac<R: Rng + ?Sized>(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    threshold: f64,
    hypotheses: usize,
    rng: &mut R,
) -> Option<RansacOutcome> {
    let n = corrs.len();
    p3p_ransac(corrs, k, threshold, Schedule::Fixed(hypotheses), rng, |r| {
        let v = rand::seq::index::sample(r, n, 3);
        [v.index(0), v.index(1), v.index(2)]
    })
}

/// Minimal samples drawn with probability proportional to `weights`,
/// adaptive stopping. Inlier counting ignores the weights.
pub fn weighted_ransac<R: Rng + ?Sized>(
    corrs: &[Correspondence],
    weights: &[f64],
    k: &CameraIntrinsics,
    threshold: f64,
    confidence: f64,
    max_iters: usize,
    rng: &mut R,
) -> Option<RansacOutcome> {
    let sampler = WeightedSampler::new(weights)?;
    if sampler.support() < 3 {
        return None;
    }
    p3p_ransac(
        corrs,
        k,
        threshold,
        Schedule::Adaptive {
            confidence,
            max_iters,
        },
        rng,
        |r| sampler.draw_distinct::<3, _>(r),
    )
}
