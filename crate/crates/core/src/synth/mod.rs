//! Synthetic scenes with exact ground truth, written in the dataset layout,
//! plus controlled corruptions of the query side.
//!
//! The scene is a cylindrical wall of points around the origin, seen by a
//! ring of outward-looking database cameras. Points come in mirror pairs
//! `(x, y, z)` / `(-x, -y, z)` and the camera ring is mirror-symmetric, so
//! the database image opposite a query's neighbor sees the mirrored copy of
//! the same structure. With `mirrored_descriptors` the pairs share
//! descriptors, and retrieving far-side images yields matches that agree
//! with a rotated decoy pose but not with the query's labels.

mod corrupt;
mod generate;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::write_poses;
use crate::geometry::Pose;
use crate::ingest::{Dataset, DatasetPaths, PointId};

pub use corrupt::{corrupt, CorruptionLog, QueryCorruption};
pub use generate::generate_scene;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scene spec: {0}")]
    InfeasibleSpec(String),
    #[error("writing dataset: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub n_points: usize,
    pub n_db_images: usize,
    pub n_queries: usize,
    /// Radius of the point wall, meters.
    pub wall_radius: f64,
    /// Radial spread of points around the wall, meters.
    pub wall_jitter: f64,
    /// Points span `[-wall_half_height, wall_half_height]` in z.
    pub wall_half_height: f64,
    /// Radius of the database camera ring, meters.
    pub ring_radius: f64,
    /// Database cameras alternate between `ring_radius +- ring_jitter`;
    /// queries stay within 60% of that band.
    pub ring_jitter: f64,
    /// Class id per octant `(x >= 0) + 2 (y >= 0) + 4 (z >= 0)`.
    pub octant_labels: [u8; 8],
    pub dynamic_fraction: f64,
    pub dynamic_label: u8,
    pub descriptor_dim: usize,
    /// Per-component noise of each observation's descriptor.
    pub observation_noise: f64,
    pub mirrored_descriptors: bool,
    /// Defaults to the number of database images.
    pub global_dim: Option<usize>,
    /// Keypoint noise, pixels.
    pub pixel_noise: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal: f64,
    pub night_fraction: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_points: 600,
            n_db_images: 24,
            n_queries: 12,
            wall_radius: 10.0,
            wall_jitter: 1.5,
            wall_half_height: 2.5,
            ring_radius: 3.0,
            ring_jitter: 0.75,
            octant_labels: [0, 1, 2, 3, 4, 5, 8, 9],
            dynamic_fraction: 0.05,
            dynamic_label: 13,
            descriptor_dim: 32,
            observation_noise: 0.02,
            mirrored_descriptors: false,
            global_dim: None,
            pixel_noise: 0.5,
            image_width: 640,
            image_height: 480,
            focal: 500.0,
            night_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Fraction of each query's top `retrieval_k` replaced by far-side images.
    pub wrong_retrieval_rate: f64,
    pub retrieval_k: usize,
    /// Per-component noise added to query descriptors.
    pub descriptor_noise: f64,
    /// Probability that a non-void query label pixel is relabeled at random.
    pub label_flip_rate: f64,
    /// Fraction of query keypoints on static points moved to wrong pixels.
    pub outlier_match_rate: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            wrong_retrieval_rate: 0.0,
            retrieval_k: 10,
            descriptor_noise: 0.0,
            label_flip_rate: 0.0,
            outlier_match_rate: 0.0,
            seed: 1,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("wrong_retrieval_rate", self.wrong_retrieval_rate),
            ("label_flip_rate", self.label_flip_rate),
            ("outlier_match_rate", self.outlier_match_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.descriptor_noise >= 0.0 && self.descriptor_noise.is_finite()) {
            return Err("descriptor_noise must be non-negative".into());
        }
        if self.retrieval_k == 0 {
            return Err("retrieval_k must be positive".into());
        }
        Ok(())
    }
}

/// Scene parameters plus optional corruption, as read from a spec file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub corruption: Option<CorruptionSpec>,
}

/// Ground truth of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTruth {
    pub name: String,
    pub pose: Pose,
    /// Model point behind each query keypoint.
    pub keypoint_points: Vec<PointId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub dataset: Dataset,
    pub truth: Vec<QueryTruth>,
    /// True class of every model point, dynamic ones included.
    pub point_labels: BTreeMap<PointId, u8>,
}

impl SynthScene {
    pub fn ground_truth(&self) -> BTreeMap<String, Pose> {
        self.truth.iter().map(|t| (t.name.clone(), t.pose)).collect()
    }

    /// Writes the dataset, `ground_truth.txt` and, if given, the corruption log.
    pub fn write(&self, root: &Path, log: Option<&CorruptionLog>) -> Result<(), SynthError> {
        fs::create_dir_all(root)?;
        self.dataset.write(root)?;
        let paths = DatasetPaths::new(root);
        write_poses(&paths.ground_truth(), &self.ground_truth())?;
        if let Some(log) = log {
            fs::write(paths.corruption_log(), log.to_text())?;
        }
        Ok(())
    }
}

/// Generates, optionally corrupts, and writes a scene.
pub fn synthesize(spec: &SynthSpec, root: &Path) -> Result<SynthScene, SynthError> {
    let mut scene = generate_scene(&spec.scene)?;
    let mut log = None;
    if let Some(c) = &spec.corruption {
        c.validate().map_err(SynthError::InfeasibleSpec)?;
        let (s, l) = corrupt(&scene, c);
        scene = s;
        log = Some(l);
    }
    scene.write(root, log.as_ref())?;
    Ok(scene)
}
