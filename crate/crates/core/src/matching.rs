//! Query-to-database descriptor matching and lifting of 2D-2D matches to
//! 2D-3D matches through the database image's model observations.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use thiserror::Error;

use crate::ingest::{DbImageRecord, DescriptorSet, ImageId, PointId};
use crate::semantic_map::SemanticMap;

/// Ratio-test threshold used by default.
pub const DEFAULT_RATIO: f64 = 0.9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("descriptor dimensions differ: query {query}, database {db}")]
    DimMismatch { query: usize, db: usize },
    #[error("need at least two database descriptors, got {0}")]
    TooFewDescriptors(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match2D2D {
    pub query_kp: usize,
    pub db_kp: usize,
    /// L2 distance to the nearest database descriptor.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match2D3D {
    pub query_kp: usize,
    pub query_px: Vector2<f64>,
    pub point3d: PointId,
    pub source_image: ImageId,
}

pub(crate) fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Nearest and second-nearest database rows for one descriptor.
fn two_nearest(q: &[f32], db: &DescriptorSet) -> ((usize, f64), f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (j, row) in db.iter().enumerate() {
        let d = l2(q, row);
        if d < best.1 {
            second = best.1;
            best = (j, d);
        } else if d < second {
            second = d;
        }
    }
    (best, second)
}

/// Exhaustive two-nearest-neighbor matching with the ratio test.
///
/// A query descriptor is matched when `d1 < ratio * d2`, where `d1`, `d2`
/// are the raw L2 distances to its two nearest database descriptors. When
/// several query descriptors pick the same database descriptor only the one
/// with the smallest `d1` (then smallest query index) is kept.
pub fn knn_ratio_match(
    query: &DescriptorSet,
    db: &DescriptorSet,
    ratio: f64,
) -> Result<Vec<Match2D2D>, MatchError> {
    if query.dim != db.dim {
        return Err(MatchError::DimMismatch {
            query: query.dim,
            db: db.dim,
        });
    }
    if db.rows < 2 {
        return Err(MatchError::TooFewDescriptors(db.rows));
    }

    let mut by_db: BTreeMap<usize, Match2D2D> = BTreeMap::new();
    for (i, q) in query.iter().enumerate() {
        let ((j, d1), d2) = two_nearest(q, db);
        if !(d1 < ratio * d2) {
            continue;
        }
        let m = Match2D2D {
            query_kp: i,
            db_kp: j,
            distance: d1,
        };
        by_db
            .entry(j)
            .and_modify(|prev| {
                if m.distance < prev.distance {
                    *prev = m;
                }
            })
            .or_insert(m);
    }
    let mut out: Vec<Match2D2D> = by_db.into_values().collect();
    out.sort_by_key(|m| m.query_kp);
    Ok(out)
}

/// Turns 2D-2D matches into 2D-3D matches via the database keypoints'
/// model points. Keypoints without a point, or whose point is not in the
/// map, are dropped.
pub fn lift_matches(
    matches: &[Match2D2D],
    query_keypoints: &[Vector2<f64>],
    db_image: &DbImageRecord,
    map: &SemanticMap,
    retrieved_id: ImageId,
) -> Vec<Match2D3D> {
    matches
        .iter()
        .filter_map(|m| {
            let pid = (*db_image.point3d_ids.get(m.db_kp)?)?;
            if !map.contains(pid) {
                return None;
            }
            Some(Match2D3D {
                query_kp: m.query_kp,
                query_px: *query_keypoints.get(m.query_kp)?,
                point3d: pid,
                source_image: retrieved_id,
            })
        })
        .collect()
}
