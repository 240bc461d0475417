//! Text sparse-model reader and writer (`cameras.txt`, `images.txt`,
//! `points3D.txt`), PINHOLE cameras only.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};

use super::{Condition, IngestError};
use crate::geometry::{CameraIntrinsics, Pose};

macro_rules! id_type {
    ($name:ident, $inner:ty) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl FromStr for $name {
            type Err = std::num::ParseIntError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.parse().map($name)
            }
        }
    };
}

id_type!(CameraId, u32);
id_type!(ImageId, u32);
id_type!(PointId, u64);

#[derive(Debug, Clone, PartialEq)]
pub struct DbImageRecord {
    pub name: String,
    pub camera_id: CameraId,
    pub pose: Pose,
    pub keypoints: Vec<Vector2<f64>>,
    pub point3d_ids: Vec<Option<PointId>>,
    /// Filled from the conditions sidecar; absent in the model files.
    pub condition: Option<Condition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrackEntry {
    pub image_id: ImageId,
    pub keypoint_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawPoint3D {
    pub position: Vector3<f64>,
    pub color: [u8; 3],
    pub error: f64,
    pub track: Vec<TrackEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SfmModel {
    pub cameras: BTreeMap<CameraId, CameraIntrinsics>,
    pub images: BTreeMap<ImageId, DbImageRecord>,
    pub points: BTreeMap<PointId, RawPoint3D>,
}

impl SfmModel {
    pub fn image_by_name(&self, name: &str) -> Option<(ImageId, &DbImageRecord)> {
        self.images
            .iter()
            .find(|(_, im)| im.name == name)
            .map(|(id, im)| (*id, im))
    }

    pub fn camera_of(&self, image: &DbImageRecord) -> &CameraIntrinsics {
        &self.cameras[&image.camera_id]
    }

    /// Checks every cross-reference invariant of the model.
    pub fn check_consistency(&self) -> Result<(), IngestError> {
        let err = |m: String| Err(IngestError::Consistency(m));
        for (id, im) in &self.images {
            let Some(cam) = self.cameras.get(&im.camera_id) else {
                return err(format!("image {id} references missing camera {}", im.camera_id));
            };
            if im.keypoints.len() != im.point3d_ids.len() {
                return err(format!("image {id} keypoint/point-id length mismatch"));
            }
            for (k, kp) in im.keypoints.iter().enumerate() {
                if !cam.contains(kp) {
                    return err(format!("image {id} keypoint {k} lies outside the image"));
                }
            }
            for (k, pid) in im.point3d_ids.iter().enumerate() {
                let Some(pid) = pid else { continue };
                let Some(pt) = self.points.get(pid) else {
                    return err(format!("image {id} keypoint {k} references missing point {pid}"));
                };
                let back = TrackEntry {
                    image_id: *id,
                    keypoint_index: k,
                };
                if !pt.track.contains(&back) {
                    return err(format!("point {pid} track lacks observation ({id}, {k})"));
                }
            }
        }
        for (pid, pt) in &self.points {
            if pt.track.len() < 2 {
                return err(format!("point {pid} has a track of length {}", pt.track.len()));
            }
            for e in &pt.track {
                let Some(im) = self.images.get(&e.image_id) else {
                    return err(format!("point {pid} track references missing image {}", e.image_id));
                };
                match im.point3d_ids.get(e.keypoint_index) {
                    Some(Some(p)) if p == pid => {}
                    _ => {
                        return err(format!(
                            "point {pid} track entry ({}, {}) is not linked back",
                            e.image_id, e.keypoint_index
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
}

fn field<T: FromStr>(path: &Path, line: usize, s: Option<&str>, what: &str) -> Result<T, IngestError> {
    let s = s.ok_or_else(|| IngestError::parse(path, line, format!("missing {what}")))?;
    s.parse()
        .map_err(|_| IngestError::parse(path, line, format!("bad {what} `{s}`")))
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|e| IngestError::io(path, e))
}

fn parse_cameras(path: &Path) -> Result<BTreeMap<CameraId, CameraIntrinsics>, IngestError> {
    let text = read(path)?;
    let mut cameras = BTreeMap::new();
    for (ln, line) in data_lines(&text).filter(|(_, l)| !l.is_empty()) {
        let mut it = line.split_whitespace();
        let id: CameraId = field(path, ln, it.next(), "camera id")?;
        let model: String = field(path, ln, it.next(), "camera model")?;
        if model != "PINHOLE" {
            return Err(IngestError::parse(
                path,
                ln,
                format!("unsupported camera model `{model}` (PINHOLE only)"),
            ));
        }
        let width: u32 = field(path, ln, it.next(), "width")?;
        let height: u32 = field(path, ln, it.next(), "height")?;
        let fx: f64 = field(path, ln, it.next(), "fx")?;
        let fy: f64 = field(path, ln, it.next(), "fy")?;
        let cx: f64 = field(path, ln, it.next(), "cx")?;
        let cy: f64 = field(path, ln, it.next(), "cy")?;
        if it.next().is_some() {
            return Err(IngestError::parse(path, ln, "trailing fields"));
        }
        let k = CameraIntrinsics::new(fx, fy, cx, cy, width, height)
            .map_err(|e| IngestError::parse(path, ln, e.to_string()))?;
        if cameras.insert(id, k).is_some() {
            return Err(IngestError::parse(path, ln, format!("duplicate camera {id}")));
        }
    }
    Ok(cameras)
}

/// Parses a `w x y z` quaternion. Unit quaternions are kept bit-exact;
/// slightly off-unit ones are normalized; anything else is an error.
pub(crate) fn parse_rotation(q: [f64; 4]) -> Option<UnitQuaternion<f64>> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    let n = quat.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
        return None;
    }
    if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
        Some(UnitQuaternion::new_unchecked(quat))
    } else {
        Some(UnitQuaternion::new_normalize(quat))
    }
}

fn parse_images(path: &Path) -> Result<BTreeMap<ImageId, DbImageRecord>, IngestError> {
    let text = read(path)?;
    let mut images = BTreeMap::new();
    let mut lines = data_lines(&text);
    while let Some((ln, header)) = lines.next() {
        if header.is_empty() {
            continue;
        }
        let mut it = header.split_whitespace();
        let id: ImageId = field(path, ln, it.next(), "image id")?;
        let mut q = [0.0; 4];
        for (i, v) in q.iter_mut().enumerate() {
            *v = field(path, ln, it.next(), ["qw", "qx", "qy", "qz"][i])?;
        }
        let tx: f64 = field(path, ln, it.next(), "tx")?;
        let ty: f64 = field(path, ln, it.next(), "ty")?;
        let tz: f64 = field(path, ln, it.next(), "tz")?;
        let camera_id: CameraId = field(path, ln, it.next(), "camera id")?;
        let name: String = field(path, ln, it.next(), "name")?;
        if it.next().is_some() {
            return Err(IngestError::parse(path, ln, "image names may not contain spaces"));
        }
        let rotation = parse_rotation(q)
            .ok_or_else(|| IngestError::parse(path, ln, "quaternion is not unit length"))?;

        let (pln, points) = lines.next().unwrap_or((ln + 1, ""));
        let vals: Vec<&str> = points.split_whitespace().collect();
        if vals.len() % 3 != 0 {
            return Err(IngestError::parse(path, pln, "POINTS2D must be (x, y, id) triples"));
        }
        let mut keypoints = Vec::with_capacity(vals.len() / 3);
        let mut point3d_ids = Vec::with_capacity(vals.len() / 3);
        for tri in vals.chunks(3) {
            let x: f64 = field(path, pln, Some(tri[0]), "keypoint x")?;
            let y: f64 = field(path, pln, Some(tri[1]), "keypoint y")?;
            let pid: i64 = field(path, pln, Some(tri[2]), "point3D id")?;
            keypoints.push(Vector2::new(x, y));
            point3d_ids.push(match pid {
                -1 => None,
                p if p >= 0 => Some(PointId(p as u64)),
                _ => return Err(IngestError::parse(path, pln, "negative point3D id")),
            });
        }
        let rec = DbImageRecord {
            name,
            camera_id,
            pose: Pose::new(rotation, Vector3::new(tx, ty, tz)),
            keypoints,
            point3d_ids,
            condition: None,
        };
        if images.insert(id, rec).is_some() {
            return Err(IngestError::parse(path, ln, format!("duplicate image {id}")));
        }
    }
    Ok(images)
}

fn parse_points(path: &Path) -> Result<BTreeMap<PointId, RawPoint3D>, IngestError> {
    let text = read(path)?;
    let mut points = BTreeMap::new();
    for (ln, line) in data_lines(&text).filter(|(_, l)| !l.is_empty()) {
        let mut it = line.split_whitespace();
        let id: PointId = field(path, ln, it.next(), "point id")?;
        let x: f64 = field(path, ln, it.next(), "x")?;
        let y: f64 = field(path, ln, it.next(), "y")?;
        let z: f64 = field(path, ln, it.next(), "z")?;
        let r: u8 = field(path, ln, it.next(), "r")?;
        let g: u8 = field(path, ln, it.next(), "g")?;
        let b: u8 = field(path, ln, it.next(), "b")?;
        let error: f64 = field(path, ln, it.next(), "error")?;
        let rest: Vec<&str> = it.collect();
        if rest.len() % 2 != 0 {
            return Err(IngestError::parse(path, ln, "track must be (image, index) pairs"));
        }
        let track = rest
            .chunks(2)
            .map(|p| {
                Ok(TrackEntry {
                    image_id: field(path, ln, Some(p[0]), "track image id")?,
                    keypoint_index: field(path, ln, Some(p[1]), "track keypoint index")?,
                })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        let pt = RawPoint3D {
            position: Vector3::new(x, y, z),
            color: [r, g, b],
            error,
            track,
        };
        if points.insert(id, pt).is_some() {
            return Err(IngestError::parse(path, ln, format!("duplicate point {id}")));
        }
    }
    Ok(points)
}

/// Loads and cross-checks a text model from `model_dir`.
pub fn load_sfm_model(model_dir: &Path) -> Result<SfmModel, IngestError> {
    let model = SfmModel {
        cameras: parse_cameras(&model_dir.join("cameras.txt"))?,
        images: parse_images(&model_dir.join("images.txt"))?,
        points: parse_points(&model_dir.join("points3D.txt"))?,
    };
    model.check_consistency()?;
    Ok(model)
}

pub fn write_sfm_model(model_dir: &Path, model: &SfmModel) -> std::io::Result<()> {
    use std::fmt::Write;
    fs::create_dir_all(model_dir)?;

    let mut s = String::from("# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    for (id, k) in &model.cameras {
        let _ = writeln!(
            s,
            "{id} PINHOLE {} {} {} {} {} {}",
            k.width, k.height, k.fx, k.fy, k.cx, k.cy
        );
    }
    fs::write(model_dir.join("cameras.txt"), s)?;

    let mut s = String::from(
        "# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    for (id, im) in &model.images {
        let [qw, qx, qy, qz] = im.pose.quaternion_wxyz();
        let t = im.pose.translation;
        let _ = writeln!(
            s,
            "{id} {qw} {qx} {qy} {qz} {} {} {} {} {}",
            t.x, t.y, t.z, im.camera_id, im.name
        );
        let pts: Vec<String> = im
            .keypoints
            .iter()
            .zip(&im.point3d_ids)
            .map(|(kp, pid)| {
                let pid = pid.map_or(-1i64, |p| p.0 as i64);
                format!("{} {} {pid}", kp.x, kp.y)
            })
            .collect();
        let _ = writeln!(s, "{}", pts.join(" "));
    }
    fs::write(model_dir.join("images.txt"), s)?;

    let mut s = String::from("# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    for (id, p) in &model.points {
        let _ = write!(
            s,
            "{id} {} {} {} {} {} {} {}",
            p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2], p.error
        );
        for e in &p.track {
            let _ = write!(s, " {} {}", e.image_id, e.keypoint_index);
        }
        s.push('\n');
    }
    fs::write(model_dir.join("points3D.txt"), s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_files(dir: &Path, points: &str) {
        fs::write(dir.join("cameras.txt"), "1 PINHOLE 640 480 500 500 320 240\n").unwrap();
        fs::write(
            dir.join("images.txt"),
            "# header\n1 1 0 0 0 0 0 0 1 a\n100 100 7\n2 1 0 0 0 -1 0 0 1 b\n110 100 7 5 5 -1\n",
        )
        .unwrap();
        fs::write(dir.join("points3D.txt"), points).unwrap();
    }

    #[test]
    fn minimal_model_loads() {
        let dir = tempfile::tempdir().unwrap();
        minimal_files(dir.path(), "7 0 0 5 255 255 255 0.1 1 0 2 0\n");
        let m = load_sfm_model(dir.path()).unwrap();
        assert_eq!(m.cameras.len(), 1);
        assert_eq!(m.images.len(), 2);
        assert_eq!(m.points[&PointId(7)].track.len(), 2);
        assert_eq!(m.images[&ImageId(2)].point3d_ids, vec![Some(PointId(7)), None]);
    }

    #[test]
    fn dangling_track_image_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        minimal_files(dir.path(), "7 0 0 5 255 255 255 0.1 1 0 2 0 99 0\n");
        assert!(matches!(
            load_sfm_model(dir.path()),
            Err(IngestError::Consistency(_))
        ));
    }

    #[test]
    fn asymmetric_track_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        // image 2 keypoint 1 is unlinked
        minimal_files(dir.path(), "7 0 0 5 255 255 255 0.1 1 0 2 0 2 1\n");
        assert!(matches!(
            load_sfm_model(dir.path()),
            Err(IngestError::Consistency(_))
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        minimal_files(dir.path(), "# c\n7 0 0 five 255 255 255 0.1 1 0 2 0\n");
        match load_sfm_model(dir.path()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_pinhole_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        minimal_files(dir.path(), "7 0 0 5 255 255 255 0.1 1 0 2 0\n");
        fs::write(dir.path().join("cameras.txt"), "1 SIMPLE_RADIAL 640 480 500 320 240 0.1\n").unwrap();
        assert!(matches!(load_sfm_model(dir.path()), Err(IngestError::Parse { .. })));
    }

    #[test]
    fn write_then_load_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        minimal_files(dir.path(), "7 0.1 -0.25 5.125 1 2 3 0.5 1 0 2 0\n");
        let m = load_sfm_model(dir.path()).unwrap();
        let out = dir.path().join("copy");
        write_sfm_model(&out, &m).unwrap();
        assert_eq!(load_sfm_model(&out).unwrap(), m);
    }
}
