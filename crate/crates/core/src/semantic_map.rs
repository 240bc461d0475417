//! Sparse semantic 3D map: per-point labels from majority voting over the
//! database label rasters, with dynamic classes removed, and per-point
//! viewing statistics that gate projection into a query.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{ClassTable, Dataset, ImageId, LabelRaster, PointId, RawPoint3D, SfmModel};

/// Minimum camera-to-point distance accepted when computing statistics.
pub const MIN_VIEW_DISTANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("no label raster for image {0}")]
    MissingRaster(ImageId),
    #[error("track references unknown image {0}")]
    MissingImage(ImageId),
    #[error("a camera center coincides with the point")]
    DegenerateGeometry,
    #[error("need at least two observing cameras, got {0}")]
    InsufficientViews(usize),
    #[error("map cache {path}: {message}")]
    Cache { path: String, message: String },
}

/// Why a point was left out of the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Removal {
    Dynamic,
    AllVoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vote {
    Label(u8),
    Removed(Removal),
}

/// Distance band and viewing cone of a point as seen by the database.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityStats {
    pub d_min: f64,
    pub d_max: f64,
    /// Unit bisector of the two most divergent viewing directions.
    pub mid_direction: Vector3<f64>,
    /// Angle between those two directions, radians.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticPoint {
    pub id: PointId,
    pub position: Vector3<f64>,
    pub label: u8,
    pub d_min: f64,
    pub d_max: f64,
    pub mid_direction: Vector3<f64>,
    pub theta: f64,
    pub track_len: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RemovalCounts {
    pub dynamic: u64,
    pub all_void: u64,
    pub degenerate: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    /// Sorted by id.
    points: Vec<SemanticPoint>,
    pub classes: ClassTable,
    pub removed: RemovalCounts,
    /// Fingerprint of the model the map was built from.
    pub source_fingerprint: u64,
}

impl SemanticMap {
    pub fn new(
        mut points: Vec<SemanticPoint>,
        classes: ClassTable,
        removed: RemovalCounts,
        source_fingerprint: u64,
    ) -> Self {
        points.sort_by_key(|p| p.id);
        points.dedup_by_key(|p| p.id);
        Self {
            points,
            classes,
            removed,
            source_fingerprint,
        }
    }

    pub fn points(&self) -> &[SemanticPoint] {
        &self.points
    }

    pub fn get(&self, id: PointId) -> Option<&SemanticPoint> {
        self.points
            .binary_search_by_key(&id, |p| p.id)
            .ok()
            .map(|i| &self.points[i])
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.get(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Majority label over the raster lookups of a point's track.
///
/// Void and out-of-raster lookups do not vote. Ties go to the smaller class
/// id. Dynamic winners and tracks without any vote are removed.
pub fn vote_point_label(
    point: &RawPoint3D,
    model: &SfmModel,
    rasters: &BTreeMap<ImageId, LabelRaster>,
    classes: &ClassTable,
) -> Result<Vote, MapError> {
    let mut counts = [0u32; 256];
    for e in &point.track {
        let raster = rasters
            .get(&e.image_id)
            .ok_or(MapError::MissingRaster(e.image_id))?;
        let image = model
            .images
            .get(&e.image_id)
            .ok_or(MapError::MissingImage(e.image_id))?;
        let Some(kp) = image.keypoints.get(e.keypoint_index) else {
            continue;
        };
        match raster.lookup(kp) {
            Some(l) if !classes.is_void(l) => counts[l as usize] += 1,
            _ => {}
        }
    }
    // first maximum in id order breaks ties toward the smaller id
    let (best, n) = counts
        .iter()
        .enumerate()
        .fold((0usize, 0u32), |acc, (l, &c)| if c > acc.1 { (l, c) } else { acc });
    if n == 0 {
        return Ok(Vote::Removed(Removal::AllVoid));
    }
    let label = best as u8;
    if classes.is_dynamic(label) {
        Ok(Vote::Removed(Removal::Dynamic))
    } else {
        Ok(Vote::Label(label))
    }
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Distance band and extreme-pair viewing cone for a point observed from
/// the given camera centers. The extreme pair is found by exhaustive search.
pub fn compute_visibility_stats(
    position: &Vector3<f64>,
    centers: &[Vector3<f64>],
) -> Result<VisibilityStats, MapError> {
    if centers.len() < 2 {
        return Err(MapError::InsufficientViews(centers.len()));
    }
    let mut dirs = Vec::with_capacity(centers.len());
    let (mut d_min, mut d_max) = (f64::INFINITY, 0.0f64);
    for c in centers {
        let v = c - position;
        let d = v.norm();
        if d < MIN_VIEW_DISTANCE {
            return Err(MapError::DegenerateGeometry);
        }
        d_min = d_min.min(d);
        d_max = d_max.max(d);
        dirs.push(v / d);
    }

    let (mut ia, mut ib, mut theta) = (0, 0, -1.0);
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let ang = angle_between(&dirs[i], &dirs[j]);
            if ang > theta {
                (ia, ib, theta) = (i, j, ang);
            }
        }
    }
    let (a, b) = (dirs[ia], dirs[ib]);
    let sum = a + b;
    let mid_direction = if sum.norm() > 1e-9 {
        sum.normalize()
    } else {
        // antipodal pair: any direction orthogonal to `a` bisects it
        let mean: Vector3<f64> = dirs.iter().sum();
        let ortho = mean - a * a.dot(&mean);
        if ortho.norm() > 1e-9 {
            ortho.normalize()
        } else {
            let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            a.cross(&helper).normalize()
        }
    };
    Ok(VisibilityStats {
        d_min,
        d_max,
        mid_direction,
        theta: theta.clamp(0.0, std::f64::consts::PI),
    })
}

/// Builds the map of a loaded dataset from its database label rasters.
pub fn build_dataset_map(dataset: &Dataset) -> Result<SemanticMap, MapError> {
    let rasters: BTreeMap<ImageId, LabelRaster> = dataset
        .db
        .iter()
        .map(|(id, d)| (*id, d.labels.clone()))
        .collect();
    build_semantic_map(&dataset.model, &rasters, &dataset.classes)
}

/// Labels every model point, drops dynamic, all-void and geometrically
/// degenerate points, and attaches viewing statistics.
pub fn build_semantic_map(
    model: &SfmModel,
    rasters: &BTreeMap<ImageId, LabelRaster>,
    classes: &ClassTable,
) -> Result<SemanticMap, MapError> {
    enum Outcome {
        Kept(SemanticPoint),
        Removed(Removal),
        Degenerate,
    }

    let outcomes = model
        .points
        .par_iter()
        .map(|(id, pt)| {
            let label = match vote_point_label(pt, model, rasters, classes)? {
                Vote::Label(l) => l,
                Vote::Removed(r) => return Ok(Outcome::Removed(r)),
            };
            let centers: Vec<Vector3<f64>> = pt
                .track
                .iter()
                .map(|e| model.images[&e.image_id].pose.camera_center())
                .collect();
            match compute_visibility_stats(&pt.position, &centers) {
                Ok(s) => Ok(Outcome::Kept(SemanticPoint {
                    id: *id,
                    position: pt.position,
                    label,
                    d_min: s.d_min,
                    d_max: s.d_max,
                    mid_direction: s.mid_direction,
                    theta: s.theta,
                    track_len: pt.track.len(),
                })),
                Err(MapError::DegenerateGeometry | MapError::InsufficientViews(_)) => {
                    Ok(Outcome::Degenerate)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, MapError>>()?;

    let mut removed = RemovalCounts::default();
    let mut points = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Kept(p) => points.push(p),
            Outcome::Removed(Removal::Dynamic) => removed.dynamic += 1,
            Outcome::Removed(Removal::AllVoid) => removed.all_void += 1,
            Outcome::Degenerate => removed.degenerate += 1,
        }
    }
    Ok(SemanticMap::new(
        points,
        classes.clone(),
        removed,
        model_fingerprint(model),
    ))
}

/// FNV-1a over the geometry and tracks of a model.
pub fn model_fingerprint(model: &SfmModel) -> u64 {
    const PRIME: u64 = 0x100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for (id, im) in &model.images {
        eat(&id.0.to_le_bytes());
        for v in im.pose.quaternion_wxyz() {
            eat(&v.to_le_bytes());
        }
        for v in im.pose.translation.iter() {
            eat(&v.to_le_bytes());
        }
        for kp in &im.keypoints {
            eat(&kp.x.to_le_bytes());
            eat(&kp.y.to_le_bytes());
        }
    }
    for (id, p) in &model.points {
        eat(&id.0.to_le_bytes());
        for v in p.position.iter() {
            eat(&v.to_le_bytes());
        }
        for e in &p.track {
            eat(&e.image_id.0.to_le_bytes());
            eat(&(e.keypoint_index as u64).to_le_bytes());
        }
    }
    h
}

const CACHE_MAGIC: &[u8; 4] = b"SMAP";
const CACHE_VERSION: u32 = 1;

impl SemanticMap {
    /// Serializes the map to a compact little-endian binary cache.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CACHE_MAGIC.to_vec();
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.source_fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.classes.names.len() as u32).to_le_bytes());
        for (i, name) in self.classes.names.iter().enumerate() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::from(self.classes.is_dynamic(i as u8)));
        }
        out.push(self.classes.void_id);
        for c in [
            self.removed.dynamic,
            self.removed.all_void,
            self.removed.degenerate,
        ] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&(self.points.len() as u64).to_le_bytes());
        for p in &self.points {
            out.extend_from_slice(&p.id.0.to_le_bytes());
            for v in p.position.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(p.label);
            out.extend_from_slice(&p.d_min.to_le_bytes());
            out.extend_from_slice(&p.d_max.to_le_bytes());
            for v in p.mid_direction.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&p.theta.to_le_bytes());
            out.extend_from_slice(&(p.track_len as u64).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        struct Cur<'a>(&'a [u8]);
        impl<'a> Cur<'a> {
            fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
                if self.0.len() < n {
                    return Err("truncated".into());
                }
                let (a, b) = self.0.split_at(n);
                self.0 = b;
                Ok(a)
            }
            fn u8(&mut self) -> Result<u8, String> {
                Ok(self.take(1)?[0])
            }
            fn u32(&mut self) -> Result<u32, String> {
                Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
            }
            fn u64(&mut self) -> Result<u64, String> {
                Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            }
            fn f64(&mut self) -> Result<f64, String> {
                Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            }
            fn vec3(&mut self) -> Result<Vector3<f64>, String> {
                Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
            }
        }

        let mut c = Cur(bytes);
        if c.take(4)? != CACHE_MAGIC {
            return Err("bad magic".into());
        }
        if c.u32()? != CACHE_VERSION {
            return Err("unsupported cache version".into());
        }
        let source_fingerprint = c.u64()?;
        let n_classes = c.u32()? as usize;
        let mut names = Vec::with_capacity(n_classes);
        let mut dynamic = std::collections::BTreeSet::new();
        for i in 0..n_classes {
            let len = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(len)?).map_err(|e| e.to_string())?;
            names.push(name.to_string());
            if c.u8()? == 1 {
                dynamic.insert(i as u8);
            }
        }
        let mut classes = ClassTable::new(names, dynamic)?;
        classes.void_id = c.u8()?;
        let removed = RemovalCounts {
            dynamic: c.u64()?,
            all_void: c.u64()?,
            degenerate: c.u64()?,
        };
        let n = c.u64()? as usize;
        let mut points = Vec::with_capacity(n.min(bytes.len() / 89));
        for _ in 0..n {
            points.push(SemanticPoint {
                id: PointId(c.u64()?),
                position: c.vec3()?,
                label: c.u8()?,
                d_min: c.f64()?,
                d_max: c.f64()?,
                mid_direction: c.vec3()?,
                theta: c.f64()?,
                track_len: c.u64()? as usize,
            });
        }
        if !c.0.is_empty() {
            return Err("trailing bytes".into());
        }
        Ok(Self {
            points,
            classes,
            removed,
            source_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), MapError> {
        fs::write(path, self.to_bytes()).map_err(|e| MapError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        let cache_err = |message: String| MapError::Cache {
            path: path.display().to_string(),
            message,
        };
        let bytes = fs::read(path).map_err(|e| cache_err(e.to_string()))?;
        Self::from_bytes(&bytes).map_err(cache_err)
    }
}
