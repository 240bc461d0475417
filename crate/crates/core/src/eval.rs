//! Pose files, precision buckets and evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{pose_error, Pose};
use crate::ingest::{parse_rotation, Condition, IngestError};

/// Writes `<name> qw qx qy qz tx ty tz` lines (world-to-camera), sorted by name.
pub fn write_poses(path: &Path, poses: &BTreeMap<String, Pose>) -> std::io::Result<()> {
    let mut out = String::new();
    for (name, p) in poses {
        let [w, x, y, z] = p.quaternion_wxyz();
        let t = p.translation;
        let _ = writeln!(out, "{name} {w} {x} {y} {z} {} {} {}", t.x, t.y, t.z);
    }
    fs::write(path, out)
}

pub fn load_poses(path: &Path) -> Result<BTreeMap<String, Pose>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(IngestError::parse(path, i + 1, "expected `<name> qw qx qy qz tx ty tz`"));
        }
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IngestError::parse(path, i + 1, e.to_string()))?;
        let rotation = parse_rotation([v[0], v[1], v[2], v[3]])
            .ok_or_else(|| IngestError::parse(path, i + 1, "quaternion is not unit length"))?;
        let pose = Pose::new(rotation, Vector3::new(v[4], v[5], v[6]));
        if out.insert(fields[0].to_string(), pose).is_some() {
            return Err(IngestError::parse(path, i + 1, format!("duplicate entry `{}`", fields[0])));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub meters: f64,
    pub degrees: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBuckets {
    pub fine: Threshold,
    pub medium: Threshold,
    pub coarse: Threshold,
}

impl Default for ThresholdBuckets {
    fn default() -> Self {
        let t = |meters, degrees| Threshold { meters, degrees };
        Self {
            fine: t(0.25, 2.0),
            medium: t(0.5, 5.0),
            coarse: t(5.0, 10.0),
        }
    }
}

impl ThresholdBuckets {
    pub fn as_array(&self) -> [Threshold; 3] {
        [self.fine, self.medium, self.coarse]
    }
}

/// Percentage of queries within each bucket. A query counts when both its
/// translation and rotation errors are within the bucket; `None` (not
/// localized) counts nowhere. An empty list gives zeros.
pub fn bucket_errors(errors: &[Option<(f64, f64)>], buckets: &ThresholdBuckets) -> [f64; 3] {
    if errors.is_empty() {
        return [0.0; 3];
    }
    let n = errors.len() as f64;
    buckets.as_array().map(|b| {
        let hits = errors
            .iter()
            .filter(|e| e.is_some_and(|(t, r)| t <= b.meters && r <= b.degrees))
            .count();
        100.0 * hits as f64 / n
    })
}

/// One row of a localization run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub name: String,
    pub condition: Condition,
    pub localized: bool,
    pub inliers: usize,
    pub used_fallback: bool,
    pub pooled_matches: usize,
    pub candidates: usize,
    /// Semantic score of each retrieved image, in retrieval order.
    pub candidate_scores: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub rng_seed: u64,
    pub uniform_weights: bool,
    pub queries: usize,
    pub localized: usize,
    pub rows: Vec<RunRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub condition: Option<Condition>,
    pub translation_error_m: Option<f64>,
    pub rotation_error_deg: Option<f64>,
    pub inliers: Option<usize>,
    pub used_fallback: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub queries: usize,
    pub fine: f64,
    pub medium: f64,
    pub coarse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub buckets: ThresholdBuckets,
    pub summary: Vec<ConditionSummary>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn summary_for(&self, condition: &str) -> Option<&ConditionSummary> {
        self.summary.iter().find(|s| s.condition == condition)
    }
}

/// Compares estimates with ground truth over every ground-truth query.
/// `run` supplies conditions and diagnostics when available.
pub fn evaluate(
    estimates: &BTreeMap<String, Pose>,
    ground_truth: &BTreeMap<String, Pose>,
    run: Option<&RunReport>,
    buckets: &ThresholdBuckets,
) -> EvalReport {
    let info: BTreeMap<&str, &RunRow> = run
        .map(|r| r.rows.iter().map(|row| (row.name.as_str(), row)).collect())
        .unwrap_or_default();
    let rows: Vec<EvalRow> = ground_truth
        .iter()
        .map(|(name, gt)| {
            let err = estimates.get(name).map(|est| pose_error(est, gt));
            let meta = info.get(name.as_str());
            EvalRow {
                name: name.clone(),
                condition: meta.map(|m| m.condition),
                translation_error_m: err.map(|e| e.0),
                rotation_error_deg: err.map(|e| e.1),
                inliers: meta.map(|m| m.inliers),
                used_fallback: meta.map(|m| m.used_fallback),
            }
        })
        .collect();

    let summarize = |label: &str, filter: &dyn Fn(&EvalRow) -> bool| {
        let errs: Vec<Option<(f64, f64)>> = rows
            .iter()
            .filter(|r| filter(r))
            .map(|r| r.translation_error_m.zip(r.rotation_error_deg))
            .collect();
        let [fine, medium, coarse] = bucket_errors(&errs, buckets);
        ConditionSummary {
            condition: label.to_string(),
            queries: errs.len(),
            fine,
            medium,
            coarse,
        }
    };
    let mut summary = vec![summarize("all", &|_| true)];
    for c in [Condition::Day, Condition::Night] {
        if rows.iter().any(|r| r.condition == Some(c)) {
            summary.push(summarize(&c.to_string(), &|r| r.condition == Some(c)));
        }
    }
    EvalReport {
        schema: 1,
        buckets: *buckets,
        summary,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn hand_counted_buckets() {
        let b = ThresholdBuckets::default();
        let errs = [Some((0.1, 1.0)), Some((0.3, 3.0)), Some((4.0, 8.0)), Some((10.0, 20.0))];
        assert_eq!(bucket_errors(&errs, &b), [25.0, 50.0, 75.0]);
        assert_eq!(bucket_errors(&[Some((0.3, 1.5))], &b), [0.0, 100.0, 100.0]);
        assert_eq!(bucket_errors(&[None, Some((0.0, 0.0))], &b), [50.0, 50.0, 50.0]);
        assert_eq!(bucket_errors(&[], &b), [0.0, 0.0, 0.0]);
        // inclusive at the bucket edges
        assert_eq!(bucket_errors(&[Some((0.25, 2.0))], &b), [100.0, 100.0, 100.0]);
    }

    #[test]
    fn default_buckets_are_ordered() {
        let b = ThresholdBuckets::default();
        let a = b.as_array();
        assert_eq!((a[0].meters, a[0].degrees), (0.25, 2.0));
        assert_eq!((a[1].meters, a[1].degrees), (0.5, 5.0));
        assert_eq!((a[2].meters, a[2].degrees), (5.0, 10.0));
        for w in a.windows(2) {
            assert!(w[0].meters <= w[1].meters && w[0].degrees <= w[1].degrees);
        }
    }

    #[test]
    fn pose_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        let mut poses = BTreeMap::new();
        poses.insert(
            "b".to_string(),
            Pose::new(
                UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
                Vector3::new(1.0, -2.5, 1e-7),
            ),
        );
        poses.insert("a".to_string(), Pose::identity());
        write_poses(&p, &poses).unwrap();
        assert_eq!(load_poses(&p).unwrap(), poses);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("a 1 0 0 0 0 0 0\n"));
    }

    #[test]
    fn missing_estimates_count_as_failures() {
        let mut gt = BTreeMap::new();
        gt.insert("q1".to_string(), Pose::identity());
        gt.insert("q2".to_string(), Pose::identity());
        let mut est = BTreeMap::new();
        est.insert("q1".to_string(), Pose::identity());
        let r = evaluate(&est, &gt, None, &ThresholdBuckets::default());
        let all = r.summary_for("all").unwrap();
        assert_eq!((all.queries, all.fine, all.coarse), (2, 50.0, 50.0));
        assert_eq!(r.rows[1].translation_error_m, None);
    }
}
