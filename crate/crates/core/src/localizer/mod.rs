//! Query localization: retrieval, per-candidate matching and temporary
//! poses, semantic scoring, and the final score-weighted RANSAC.

pub mod ransac;
pub mod sampler;
pub mod scoring;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Correspondence, Pose};
use crate::ingest::{DbImageData, QueryImage, SfmModel};
use crate::matching::{knn_ratio_match, lift_matches, Match2D3D, DEFAULT_RATIO};
use crate::retrieval::{rank_database, RetrievalConfig};
use crate::semantic_map::SemanticMap;

pub use ransac::RansacOutcome;
pub use sampler::WeightedSampler;
pub use scoring::{
    assign_weights, semantic_score, visible, ScoredCandidate, WeightedMatch, Weighting,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerConfig {
    pub theta_min_deg: f64,
    pub inlier_px: f64,
    pub ransac_confidence: f64,
    pub ransac_max_iters: usize,
    pub temp_pose_min_matches: usize,
    pub temp_pose_iters: usize,
    pub match_ratio: f64,
    pub uniform_weights: bool,
    pub rng_seed: u64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            theta_min_deg: 5.0,
            inlier_px: 10.0,
            ransac_confidence: 0.99,
            ransac_max_iters: 10_000,
            temp_pose_min_matches: 12,
            temp_pose_iters: 500,
            match_ratio: DEFAULT_RATIO,
            uniform_weights: false,
            rng_seed: 0,
        }
    }
}

impl LocalizerConfig {
    pub fn theta_min(&self) -> f64 {
        self.theta_min_deg.to_radians()
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("theta_min_deg", self.theta_min_deg),
            ("inlier_px", self.inlier_px),
            ("match_ratio", self.match_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return Err(format!(
                "ransac_confidence must lie in (0, 1), got {}",
                self.ransac_confidence
            ));
        }
        if self.ransac_max_iters == 0 || self.temp_pose_iters == 0 {
            return Err("iteration limits must be positive".into());
        }
        if self.temp_pose_min_matches < 4 {
            return Err("temp_pose_min_matches must be at least 4".into());
        }
        Ok(())
    }

    fn weighting(&self) -> Weighting {
        if self.uniform_weights {
            Weighting::Uniform
        } else {
            Weighting::Semantic
        }
    }
}

fn correspondences(matches: &[Match2D3D], map: &SemanticMap) -> Vec<Correspondence> {
    matches
        .iter()
        .map(|m| {
            let p = map.get(m.point3d).expect("lifted matches reference map points");
            Correspondence::new(m.query_px, p.position)
        })
        .collect()
}

/// Coarse pose from one candidate's matches, or `None` when there are too
/// few matches or too few inliers.
pub fn temporary_pose<R: Rng + ?Sized>(
    matches: &[Match2D3D],
    map: &SemanticMap,
    k: &CameraIntrinsics,
    cfg: &LocalizerConfig,
    rng: &mut R,
) -> Option<Pose> {
    if matches.len() < cfg.temp_pose_min_matches {
        return None;
    }
    let corrs = correspondences(matches, map);
    ransac::uniform_ransac(&corrs, k, cfg.inlier_px, cfg.temp_pose_iters, rng).map(|o| o.pose)
}

/// Final pose from the pooled weighted matches. Returns the pose and its
/// inlier count.
pub fn weighted_ransac_pnp<R: Rng + ?Sized>(
    weighted: &[WeightedMatch],
    map: &SemanticMap,
    k: &CameraIntrinsics,
    cfg: &LocalizerConfig,
    rng: &mut R,
) -> Option<(Pose, usize)> {
    let matches: Vec<Match2D3D> = weighted.iter().map(|w| w.m).collect();
    let corrs = correspondences(&matches, map);
    let p: Vec<f64> = weighted.iter().map(|w| w.p).collect();
    ransac::weighted_ransac(
        &corrs,
        &p,
        k,
        cfg.inlier_px,
        cfg.ransac_confidence,
        cfg.ransac_max_iters,
        rng,
    )
    .map(|o| (o.pose, o.inliers.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub pose: Option<Pose>,
    pub inliers: usize,
    pub candidates: Vec<ScoredCandidate>,
    pub used_fallback: bool,
    /// Distinct pooled 2D-3D matches.
    pub pooled_matches: usize,
}

impl LocalizationResult {
    fn failed(candidates: Vec<ScoredCandidate>) -> Self {
        Self {
            pose: None,
            inliers: 0,
            candidates,
            used_fallback: false,
            pooled_matches: 0,
        }
    }
}

/// Read-only state shared by every query.
pub struct Localizer<'a> {
    pub map: &'a SemanticMap,
    pub model: &'a SfmModel,
    pub db: &'a BTreeMap<crate::ingest::ImageId, DbImageData>,
    pub retrieval: RetrievalConfig,
    pub config: LocalizerConfig,
}

impl<'a> Localizer<'a> {
    pub fn new(
        dataset: &'a crate::ingest::Dataset,
        map: &'a SemanticMap,
        retrieval: RetrievalConfig,
        config: LocalizerConfig,
    ) -> Self {
        Self {
            map,
            model: &dataset.model,
            db: &dataset.db,
            retrieval,
            config,
        }
    }

    /// RNG for one query. Results depend only on the seed and the query's
    /// position in the query list.
    pub fn query_rng(&self, query_index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        rng.set_stream(query_index as u64);
        rng
    }

    fn score_candidate(
        &self,
        query: &QueryImage,
        image_id: crate::ingest::ImageId,
        seed: u64,
    ) -> ScoredCandidate {
        let mut cand = ScoredCandidate {
            image_id,
            matches: Vec::new(),
            temp_pose: None,
            score: 0,
        };
        let (Some(record), Some(data)) = (self.model.images.get(&image_id), self.db.get(&image_id))
        else {
            log::warn!("retrieved image {image_id:?} has no model record or features");
            return cand;
        };
        let raw = match knn_ratio_match(&query.descriptors, &data.descriptors, self.config.match_ratio) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("{}: matching against {}: {e}", query.name, record.name);
                return cand;
            }
        };
        cand.matches = lift_matches(&raw, &query.keypoints, record, self.map, image_id);
        if self.config.uniform_weights {
            return cand;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cand.temp_pose =
            temporary_pose(&cand.matches, self.map, &query.intrinsics, &self.config, &mut rng);
        if let Some(pose) = &cand.temp_pose {
            cand.score = semantic_score(
                self.map,
                &query.labels,
                pose,
                &query.intrinsics,
                self.config.theta_min(),
            );
        }
        cand
    }

    pub fn localize(&self, query: &QueryImage, query_index: usize) -> LocalizationResult {
        let mut rng = self.query_rng(query_index);
        let k = self.retrieval.k_for(query.condition);
        let ranked = match rank_database(
            &query.global,
            self.db.iter().map(|(id, d)| (*id, &d.global)),
            k,
        ) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: retrieval failed: {e}", query.name);
                return LocalizationResult::failed(Vec::new());
            }
        };
        let seeds: Vec<u64> = ranked.ids().map(|_| rng.random()).collect();
        let ids: Vec<_> = ranked.ids().collect();
        let candidates: Vec<ScoredCandidate> = ids
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(&id, &seed)| self.score_candidate(query, id, seed))
            .collect();

        let (weighted, used_fallback) = assign_weights(&candidates, self.config.weighting());
        if used_fallback {
            log::info!("{}: semantic scores unusable, sampling uniformly", query.name);
        }
        let pooled_matches = weighted.len();
        match weighted_ransac_pnp(&weighted, self.map, &query.intrinsics, &self.config, &mut rng) {
            Some((pose, inliers)) => LocalizationResult {
                pose: Some(pose),
                inliers,
                candidates,
                used_fallback,
                pooled_matches,
            },
            None => LocalizationResult {
                used_fallback,
                pooled_matches,
                ..LocalizationResult::failed(candidates)
            },
        }
    }

    /// Localizes every query in parallel; output order follows the input.
    pub fn localize_all(&self, queries: &[QueryImage]) -> Vec<LocalizationResult> {
        queries
            .par_iter()
            .enumerate()
            .map(|(i, q)| self.localize(q, i))
            .collect()
    }
}
