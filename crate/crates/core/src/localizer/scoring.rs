//! Visibility test, semantic consistency score and match weights.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::geometry::{project, CameraIntrinsics, Pose};
use crate::ingest::{ImageId, LabelRaster, PointId};
use crate::matching::Match2D3D;
use crate::semantic_map::{SemanticMap, SemanticPoint};

/// Viewing rays shorter than this are never visible.
pub const MIN_RAY_NORM: f64 = 1e-9;

/// Whether a query camera at `center` lies inside the distance band and
/// viewing cone the database observed `point` from. The cone half-width is
/// never narrower than `theta_min` radians. Bounds are inclusive.
pub fn visible(point: &SemanticPoint, center: &Vector3<f64>, theta_min: f64) -> bool {
    let v = center - point.position;
    let d = v.norm();
    if d < MIN_RAY_NORM {
        return false;
    }
    if d < point.d_min || d > point.d_max {
        return false;
    }
    let angle = v.cross(&point.mid_direction).norm().atan2(v.dot(&point.mid_direction));
    angle <= point.theta.max(theta_min)
}

/// Counts visible map points whose projection lands on a query pixel with
/// the same label. Void pixels and points off-image or behind the camera
/// do not count.
pub fn semantic_score(
    map: &SemanticMap,
    labels: &LabelRaster,
    pose: &Pose,
    k: &CameraIntrinsics,
    theta_min: f64,
) -> u64 {
    let center = pose.camera_center();
    let void = map.classes.void_id;
    map.points()
        .iter()
        .filter(|p| visible(p, &center, theta_min))
        .filter(|p| {
            let Some(px) = project(pose, k, &p.position) else {
                return false;
            };
            if !k.contains(&px) {
                return false;
            }
            match labels.lookup(&px) {
                Some(l) if l != void => l == p.label,
                _ => false,
            }
        })
        .count() as u64
}

/// One retrieved database image with its matches and semantic score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub image_id: ImageId,
    pub matches: Vec<Match2D3D>,
    pub temp_pose: Option<Pose>,
    /// Zero whenever `temp_pose` is `None`.
    pub score: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMatch {
    pub m: Match2D3D,
    /// Sum of the scores of every candidate that produced this match.
    pub raw_weight: u64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Semantic,
    Uniform,
}

/// Pools the candidates' matches, merging duplicates by
/// `(query keypoint, map point)`, and normalizes the summed scores into
/// sampling probabilities. Returns the weighted matches ordered by
/// `(query keypoint, map point)` and whether the uniform fallback was used.
///
/// The fallback (uniform `p`) applies when fewer than three pooled matches
/// have a positive score, which includes the all-zero case.
pub fn assign_weights(
    candidates: &[ScoredCandidate],
    weighting: Weighting,
) -> (Vec<WeightedMatch>, bool) {
    let mut pooled: BTreeMap<(usize, PointId), (Match2D3D, u64)> = BTreeMap::new();
    for c in candidates {
        for m in &c.matches {
            pooled
                .entry((m.query_kp, m.point3d))
                .and_modify(|e| e.1 += c.score)
                .or_insert((*m, c.score));
        }
    }
    let n = pooled.len();
    let total: u64 = pooled.values().map(|e| e.1).sum();
    let positive = pooled.values().filter(|e| e.1 > 0).count();
    let uniform = weighting == Weighting::Uniform || positive < 3;
    let fallback = weighting == Weighting::Semantic && uniform && n > 0;
    let out = pooled
        .into_values()
        .map(|(m, raw)| WeightedMatch {
            m,
            raw_weight: raw,
            p: if uniform {
                1.0 / n as f64
            } else {
                raw as f64 / total as f64
            },
        })
        .collect();
    (out, fallback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ClassTable;
    use crate::semantic_map::RemovalCounts;
    use nalgebra::Vector2;
    use proptest::prelude::*;

    fn pt(position: Vector3<f64>, d_min: f64, d_max: f64, mid: Vector3<f64>, theta: f64) -> SemanticPoint {
        SemanticPoint {
            id: PointId(0),
            position,
            label: 0,
            d_min,
            d_max,
            mid_direction: mid,
            theta,
            track_len: 2,
        }
    }

    #[test]
    fn visibility_band_examples() {
        let p = pt(Vector3::zeros(), 2.0, 6.0, Vector3::z(), 0.0);
        let tmin = 5f64.to_radians();
        assert!(visible(&p, &Vector3::new(0.0, 0.0, 4.0), tmin));
        assert!(!visible(&p, &Vector3::new(0.0, 0.0, 8.0), tmin));
        // inclusive at the band ends
        assert!(visible(&p, &Vector3::new(0.0, 0.0, 2.0), tmin));
        assert!(visible(&p, &Vector3::new(0.0, 0.0, 6.0), tmin));
        assert!(!visible(&p, &Vector3::zeros(), tmin));
        // 10 degrees off axis is outside the 5 degree floor
        let off = Vector3::new(10f64.to_radians().sin(), 0.0, 10f64.to_radians().cos()) * 4.0;
        assert!(!visible(&p, &off, tmin));
        assert!(visible(&p, &off, 11f64.to_radians()));
    }

    fn match_(q: usize, p: u64, img: u32) -> Match2D3D {
        Match2D3D {
            query_kp: q,
            query_px: Vector2::zeros(),
            point3d: PointId(p),
            source_image: ImageId(img),
        }
    }

    fn cand(img: u32, score: u64, ms: Vec<Match2D3D>) -> ScoredCandidate {
        ScoredCandidate {
            image_id: ImageId(img),
            matches: ms,
            temp_pose: None,
            score,
        }
    }

    #[test]
    fn normalization_example() {
        let a = cand(0, 100, (0..10).map(|i| match_(i, i as u64, 0)).collect());
        let b = cand(1, 50, (10..15).map(|i| match_(i, i as u64, 1)).collect());
        let (w, fb) = assign_weights(&[a, b], Weighting::Semantic);
        assert!(!fb);
        assert_eq!(w.len(), 15);
        for x in &w {
            let expect = if x.m.query_kp < 10 { 0.08 } else { 0.04 };
            assert!((x.p - expect).abs() < 1e-15);
        }
        let sum: f64 = w.iter().map(|x| x.p).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_scores_fall_back_to_uniform() {
        let a = cand(0, 0, (0..5).map(|i| match_(i, i as u64, 0)).collect());
        let b = cand(1, 0, (5..8).map(|i| match_(i, i as u64, 1)).collect());
        let (w, fb) = assign_weights(&[a, b], Weighting::Semantic);
        assert!(fb);
        assert!(w.iter().all(|x| x.p == 0.125));
    }

    #[test]
    fn shared_match_sums_scores() {
        let a = cand(0, 100, vec![match_(0, 7, 0), match_(1, 8, 0), match_(2, 9, 0)]);
        let b = cand(1, 50, vec![match_(0, 7, 1)]);
        let (w, _) = assign_weights(&[a, b], Weighting::Semantic);
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].raw_weight, 150);
        assert_eq!(w[0].m.source_image, ImageId(0));
        assert!((w[0].p - 150.0 / 350.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_mode_ignores_scores() {
        let a = cand(0, 100, vec![match_(0, 7, 0), match_(1, 8, 0)]);
        let b = cand(1, 5, vec![match_(0, 7, 1), match_(2, 9, 1), match_(3, 1, 1)]);
        let (w, fb) = assign_weights(&[a, b], Weighting::Uniform);
        assert!(!fb);
        assert!(w.iter().all(|x| x.p == 0.25));
    }

    fn random_candidates(scores: &[u64], sizes: &[usize]) -> Vec<ScoredCandidate> {
        let mut next = 0usize;
        scores
            .iter()
            .zip(sizes)
            .enumerate()
            .map(|(i, (&s, &n))| {
                let ms = (0..n)
                    .map(|_| {
                        next += 1;
                        match_(next, next as u64, i as u32)
                    })
                    .collect();
                cand(i as u32, s, ms)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn scaling_scores_keeps_p_bit_identical(
            scores in prop::collection::vec(1u64..1000, 1..6),
            sizes in prop::collection::vec(1usize..20, 6),
            c in 2u64..1000,
        ) {
            let base = random_candidates(&scores, &sizes);
            let scaled: Vec<_> = base
                .iter()
                .map(|x| ScoredCandidate { score: x.score * c, ..x.clone() })
                .collect();
            let (a, _) = assign_weights(&base, Weighting::Semantic);
            let (b, _) = assign_weights(&scaled, Weighting::Semantic);
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.p.to_bits(), y.p.to_bits());
            }
        }

        #[test]
        fn raising_a_score_never_lowers_its_p(
            scores in prop::collection::vec(1u64..1000, 2..6),
            sizes in prop::collection::vec(1usize..20, 6),
            which in 0usize..6,
            bump in 1u64..1000,
        ) {
            let which = which % scores.len();
            let base = random_candidates(&scores, &sizes);
            let mut raised = base.clone();
            raised[which].score += bump;
            let (a, _) = assign_weights(&base, Weighting::Semantic);
            let (b, _) = assign_weights(&raised, Weighting::Semantic);
            for (x, y) in a.iter().zip(&b) {
                if x.m.source_image == ImageId(which as u32) {
                    prop_assert!(y.p >= x.p);
                }
            }
        }

        #[test]
        fn probabilities_sum_to_one(
            scores in prop::collection::vec(0u64..1000, 1..6),
            sizes in prop::collection::vec(1usize..20, 6),
        ) {
            let (w, _) = assign_weights(&random_candidates(&scores, &sizes), Weighting::Semantic);
            let sum: f64 = w.iter().map(|x| x.p).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|x| x.p >= 0.0));
        }
    }

    #[test]
    fn score_counts_label_agreement() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let pose = Pose::identity();
        // one point straight ahead at depth 5, seen from the origin
        let mut p = pt(Vector3::new(0.0, 0.0, 5.0), 1.0, 10.0, -Vector3::z(), 0.0);
        p.label = 3;
        let map = SemanticMap::new(vec![p], ClassTable::cityscapes(), RemovalCounts::default(), 0);
        let mut labels = LabelRaster::filled(100, 100, 3);
        assert_eq!(semantic_score(&map, &labels, &pose, &k, 0.1), 1);
        labels.set(50, 50, 4);
        assert_eq!(semantic_score(&map, &labels, &pose, &k, 0.1), 0);
        labels.set(50, 50, crate::ingest::VOID_LABEL);
        assert_eq!(semantic_score(&map, &labels, &pose, &k, 0.1), 0);
        // camera moved far away: outside the distance band
        let far = Pose::from_center(&nalgebra::Matrix3::identity(), &Vector3::new(0.0, 0.0, -20.0));
        labels.set(50, 50, 3);
        assert_eq!(semantic_score(&map, &labels, &far, &k, 0.1), 0);
    }
}
