//! Exact top-k image retrieval over unit-norm global descriptors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Condition, GlobalDescriptor, ImageId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("descriptor dimension {found} differs from query dimension {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k_day: usize,
    pub k_night: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_day: 30,
            k_night: 50,
        }
    }
}

impl RetrievalConfig {
    pub fn k_for(&self, condition: Condition) -> usize {
        match condition {
            Condition::Day => self.k_day,
            Condition::Night => self.k_night,
        }
    }
}

/// Database images ordered by ascending descriptor distance.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidates {
    pub entries: Vec<(ImageId, f64)>,
}

impl RankedCandidates {
    pub fn ids(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Brute-force k nearest database images by L2 distance; ties go to the
/// smaller image id. `k` larger than the database is clamped.
pub fn rank_database<'a>(
    query: &GlobalDescriptor,
    db: impl IntoIterator<Item = (ImageId, &'a GlobalDescriptor)>,
    k: usize,
) -> Result<RankedCandidates, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let mut scored = Vec::new();
    for (id, gd) in db {
        if gd.dim() != query.dim() {
            return Err(RetrievalError::DimMismatch {
                expected: query.dim(),
                found: gd.dim(),
            });
        }
        scored.push((id, l2(&query.values, &gd.values)));
    }
    if k > scored.len() {
        log::warn!("retrieval k={k} exceeds database size {}; clamping", scored.len());
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(RankedCandidates { entries: scored })
}

/// Same ranking via descending dot product. For unit vectors
/// `|a - b|^2 = 2 - 2 a.b`, so the order matches [`rank_database`].
pub fn rank_by_similarity<'a>(
    query: &GlobalDescriptor,
    db: impl IntoIterator<Item = (ImageId, &'a GlobalDescriptor)>,
    k: usize,
) -> Result<Vec<(ImageId, f64)>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let mut scored = Vec::new();
    for (id, gd) in db {
        if gd.dim() != query.dim() {
            return Err(RetrievalError::DimMismatch {
                expected: query.dim(),
                found: gd.dim(),
            });
        }
        let dot: f64 = query
            .values
            .iter()
            .zip(&gd.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        scored.push((id, dot));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gd(v: &[f32]) -> GlobalDescriptor {
        GlobalDescriptor::normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn own_descriptor_ranks_first() {
        let db = [gd(&[1.0, 2.0, 3.0]), gd(&[3.0, 2.0, 1.0]), gd(&[0.0, 1.0, 0.0])];
        let r = rank_database(
            &db[1],
            db.iter().enumerate().map(|(i, g)| (ImageId(i as u32), g)),
            3,
        )
        .unwrap();
        assert_eq!(r.entries[0], (ImageId(1), 0.0));
    }

    #[test]
    fn toy_two_dimensional_ranking() {
        let db = [gd(&[1.0, 0.0]), gd(&[0.0, 1.0]), gd(&[-1.0, 0.0])];
        let r = rank_database(
            &gd(&[1.0, 0.0]),
            db.iter().enumerate().map(|(i, g)| (ImageId(i as u32), g)),
            2,
        )
        .unwrap();
        assert_eq!(r.entries.len(), 2);
        assert_eq!(r.entries[0], (ImageId(0), 0.0));
        assert_eq!(r.entries[1].0, ImageId(1));
        assert!((r.entries[1].1 - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_id_and_k_clamps() {
        let a = gd(&[0.0, 1.0]);
        let db = [(ImageId(5), &a), (ImageId(2), &a), (ImageId(9), &a)];
        let r = rank_database(&gd(&[1.0, 0.0]), db, 10).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec![ImageId(2), ImageId(5), ImageId(9)]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = gd(&[0.0, 1.0, 0.0]);
        assert_eq!(
            rank_database(&gd(&[1.0, 0.0]), [(ImageId(0), &a)], 1),
            Err(RetrievalError::DimMismatch {
                expected: 2,
                found: 3
            })
        );
        assert_eq!(
            rank_database(&gd(&[1.0, 0.0]), [(ImageId(0), &a)], 0),
            Err(RetrievalError::ZeroK)
        );
    }
}
