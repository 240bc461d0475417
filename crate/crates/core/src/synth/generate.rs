use std::collections::{BTreeMap, HashMap};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{QueryTruth, SceneSpec, SynthError, SynthScene};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::ingest::{
    CameraId, ClassTable, Condition, Dataset, DbImageData, DbImageRecord, DescriptorSet,
    GlobalDescriptor, ImageId, LabelRaster, PointId, QueryImage, RawPoint3D, SfmModel, TrackEntry,
    VOID_LABEL,
};

/// Keypoints stay this far inside the image border.
const BORDER_PX: f64 = 2.0;
const MIN_DEPTH: f64 = 0.1;
const SPLAT_RADIUS: i64 = 3;
const MIN_QUERY_KEYPOINTS: usize = 20;

struct ScenePoint {
    position: Vector3<f64>,
    normal: Vector3<f64>,
    label: u8,
    descriptor: Vec<f64>,
}

struct Observation {
    point: usize,
    keypoint: Vector2<f64>,
    depth: f64,
}

fn mirror(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.x, -v.y, v.z)
}

/// Camera at `center` looking along `forward`, image y pointing down.
fn looking_pose(center: &Vector3<f64>, forward: &Vector3<f64>) -> Pose {
    let z = forward.normalize();
    let down = -Vector3::z();
    let y = (down - z * z.dot(&down)).normalize();
    let x = y.cross(&z);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose::from_center(&r, center)
}

fn mirror_pose(pose: &Pose) -> Pose {
    let m = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
    Pose::from_center(&(pose.rotation_matrix() * m), &mirror(&pose.camera_center()))
}

/// Projection of a point the camera can see: in front, inside the border,
/// facing the camera.
fn sees(pose: &Pose, k: &CameraIntrinsics, x: &Vector3<f64>, normal: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
    let pc = pose.transform(x);
    if pc.z < MIN_DEPTH || (pose.camera_center() - x).dot(normal) <= 0.0 {
        return None;
    }
    let px = k.project_camera_point(&pc)?;
    let inside = px.x >= BORDER_PX
        && px.y >= BORDER_PX
        && px.x <= k.width as f64 - 1.0 - BORDER_PX
        && px.y <= k.height as f64 - 1.0 - BORDER_PX;
    inside.then_some((px, pc.z))
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn noisy_descriptor(base: &[f64], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> impl Iterator<Item = f32> {
    let v: Vec<f64> = base.iter().map(|b| b + noise.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(move |x| (x / n) as f32)
}

/// Global descriptor ranking database image `order[r]` at position `r`.
pub(crate) fn ranked_global(order: &[usize], dim: usize) -> GlobalDescriptor {
    let mut v = vec![0f32; dim];
    for (r, &j) in order.iter().enumerate() {
        v[j] = (1.0 / (r as f64 + 1.0)) as f32;
    }
    GlobalDescriptor::normalized(v).expect("at least one database image")
}

pub(crate) fn basis_global(j: usize, dim: usize) -> GlobalDescriptor {
    let mut v = vec![0f32; dim];
    v[j] = 1.0;
    GlobalDescriptor { values: v }
}

/// Keeps the nearest observation per rounded pixel.
fn unique_pixels(mut obs: Vec<Observation>) -> Vec<Observation> {
    obs.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.point.cmp(&b.point)));
    let mut taken = std::collections::HashSet::new();
    obs.retain(|o| taken.insert((o.keypoint.x.round() as i64, o.keypoint.y.round() as i64)));
    obs.sort_by_key(|o| o.point);
    obs
}

fn validate(spec: &SceneSpec) -> Result<(), SynthError> {
    let fail = |m: &str| Err(SynthError::InfeasibleSpec(m.into()));
    if spec.n_points < 2 || spec.n_queries == 0 {
        return fail("need at least two points and one query");
    }
    if spec.n_db_images < 2 || spec.n_db_images % 2 != 0 {
        return fail("n_db_images must be even and at least 2");
    }
    if !(spec.ring_jitter >= 0.0 && spec.ring_jitter < spec.ring_radius)
        || spec.ring_radius + spec.ring_jitter + 0.5 >= spec.wall_radius - spec.wall_jitter
    {
        return fail("camera ring must lie well inside the wall");
    }
    if !(spec.pixel_noise >= 0.0) || !(spec.observation_noise >= 0.0) {
        return fail("noise levels must be non-negative");
    }
    if spec.descriptor_dim == 0 || spec.focal <= 0.0 || spec.image_width < 16 || spec.image_height < 16 {
        return fail("bad descriptor or camera parameters");
    }
    if spec.global_dim.is_some_and(|g| g < spec.n_db_images) {
        return fail("global_dim must be at least n_db_images");
    }
    for f in [spec.dynamic_fraction, spec.night_fraction] {
        if !(0.0..=1.0).contains(&f) {
            return fail("fractions must lie in [0, 1]");
        }
    }
    let classes = ClassTable::cityscapes();
    if spec.octant_labels.iter().any(|&l| !classes.is_known(l) || classes.is_dynamic(l)) {
        return fail("octant labels must be static classes");
    }
    if !classes.is_dynamic(spec.dynamic_label) {
        return fail("dynamic_label must be a dynamic class");
    }
    Ok(())
}

fn octant_label(spec: &SceneSpec, x: &Vector3<f64>) -> u8 {
    let i = (x.x >= 0.0) as usize + 2 * (x.y >= 0.0) as usize + 4 * (x.z >= 0.0) as usize;
    spec.octant_labels[i]
}

/// Builds a complete scene. Deterministic in `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<SynthScene, SynthError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = CameraIntrinsics::new(
        spec.focal,
        spec.focal,
        spec.image_width as f64 / 2.0,
        spec.image_height as f64 / 2.0,
        spec.image_width,
        spec.image_height,
    )
    .map_err(|e| SynthError::InfeasibleSpec(e.to_string()))?;
    let pixel_noise = Normal::new(0.0, spec.pixel_noise).expect("checked non-negative");
    let desc_noise = Normal::new(0.0, spec.observation_noise).expect("checked non-negative");
    let n_db = spec.n_db_images;
    let gdim = spec.global_dim.unwrap_or(n_db);

    // database ring; the second half mirrors the first exactly
    let mut db_poses = Vec::with_capacity(n_db);
    for j in 0..n_db / 2 {
        let phi = std::f64::consts::TAU * j as f64 / n_db as f64;
        let dir = Vector3::new(phi.cos(), phi.sin(), 0.0);
        // alternate inner and outer cameras so every track spans a depth range
        let r = if j % 2 == 0 {
            spec.ring_radius + spec.ring_jitter
        } else {
            spec.ring_radius - spec.ring_jitter
        };
        db_poses.push(looking_pose(&(dir * r), &dir));
    }
    for j in 0..n_db / 2 {
        let m = mirror_pose(&db_poses[j]);
        db_poses.push(m);
    }

    // mirror pairs seen by at least two database cameras each
    let pairs = spec.n_points.div_ceil(2);
    let max_attempts = 200 * pairs + 1000;
    let mut points: Vec<ScenePoint> = Vec::with_capacity(2 * pairs);
    let mut attempts = 0;
    while points.len() < 2 * pairs {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SynthError::InfeasibleSpec(format!(
                "only {} of {} points are visible from two database cameras",
                points.len(),
                spec.n_points
            )));
        }
        let psi = rng.random_range(0.0..std::f64::consts::TAU);
        let rho = spec.wall_radius + rng.random_range(-spec.wall_jitter..=spec.wall_jitter);
        let z = rng.random_range(-spec.wall_half_height..=spec.wall_half_height);
        let radial = Vector3::new(psi.cos(), psi.sin(), 0.0);
        let p = Vector3::new(rho * psi.cos(), rho * psi.sin(), z);
        let pm = mirror(&p);
        let (n, nm) = (-radial, -mirror(&radial));
        let seen = |x: &Vector3<f64>, nrm: &Vector3<f64>| {
            db_poses.iter().filter(|pose| sees(pose, &k, x, nrm).is_some()).count()
        };
        if seen(&p, &n) < 2 || seen(&pm, &nm) < 2 {
            continue;
        }
        let base = unit_gaussian(spec.descriptor_dim, &mut rng);
        let base_m = if spec.mirrored_descriptors {
            base.clone()
        } else {
            unit_gaussian(spec.descriptor_dim, &mut rng)
        };
        for (x, nrm, d) in [(p, n, base), (pm, nm, base_m)] {
            let label = if rng.random::<f64>() < spec.dynamic_fraction {
                spec.dynamic_label
            } else {
                octant_label(spec, &x)
            };
            points.push(ScenePoint {
                position: x,
                normal: nrm,
                label,
                descriptor: d,
            });
        }
    }
    points.truncate(spec.n_points);

    // database observations
    let mut per_image: Vec<Vec<Observation>> = Vec::with_capacity(n_db);
    for pose in &db_poses {
        let mut obs = Vec::new();
        for (i, pt) in points.iter().enumerate() {
            if let Some((px, depth)) = sees(pose, &k, &pt.position, &pt.normal) {
                let kp = px + Vector2::new(pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng));
                if k.contains(&kp) && k.contains(&kp.add_scalar(0.5)) {
                    obs.push(Observation {
                        point: i,
                        keypoint: kp,
                        depth,
                    });
                }
            }
        }
        per_image.push(unique_pixels(obs));
    }
    let mut track_len = vec![0usize; points.len()];
    for o in per_image.iter().flatten() {
        track_len[o.point] += 1;
    }
    for obs in &mut per_image {
        obs.retain(|o| track_len[o.point] >= 2);
    }
    let kept: Vec<usize> = (0..points.len()).filter(|&i| track_len[i] >= 2).collect();
    if kept.is_empty() {
        return Err(SynthError::InfeasibleSpec("no point keeps two observations".into()));
    }
    let point_id = |i: usize| PointId(i as u64 + 1);

    let classes = ClassTable::cityscapes();
    let mut model = SfmModel::default();
    model.cameras.insert(CameraId(1), k);
    let mut tracks: BTreeMap<usize, Vec<TrackEntry>> = BTreeMap::new();
    let mut db = BTreeMap::new();
    for (j, (pose, obs)) in db_poses.iter().zip(&per_image).enumerate() {
        let image_id = ImageId(j as u32 + 1);
        let mut data = Vec::with_capacity(obs.len() * spec.descriptor_dim);
        for (kp_idx, o) in obs.iter().enumerate() {
            tracks.entry(o.point).or_default().push(TrackEntry {
                image_id,
                keypoint_index: kp_idx,
            });
            data.extend(noisy_descriptor(&points[o.point].descriptor, &desc_noise, &mut rng));
        }
        let mut labels = LabelRaster::filled(k.width, k.height, VOID_LABEL);
        let mut far_first: Vec<&Observation> = obs.iter().collect();
        far_first.sort_by(|a, b| b.depth.total_cmp(&a.depth).then(a.point.cmp(&b.point)));
        for o in &far_first {
            labels.fill_disk(&o.keypoint, SPLAT_RADIUS, points[o.point].label);
        }
        for o in &far_first {
            labels.fill_disk(&o.keypoint, 0, points[o.point].label);
        }
        model.images.insert(
            image_id,
            DbImageRecord {
                name: format!("db_{j:03}"),
                camera_id: CameraId(1),
                pose: *pose,
                keypoints: obs.iter().map(|o| o.keypoint).collect(),
                point3d_ids: obs.iter().map(|o| Some(point_id(o.point))).collect(),
                condition: Some(Condition::Day),
            },
        );
        db.insert(
            image_id,
            DbImageData {
                labels,
                descriptors: DescriptorSet::new(spec.descriptor_dim, data),
                global: basis_global(j, gdim),
            },
        );
    }
    for &i in &kept {
        let pt = &points[i];
        let shade = (pt.label as u16 * 13 % 256) as u8;
        model.points.insert(
            point_id(i),
            RawPoint3D {
                position: pt.position,
                color: [shade, shade, shade],
                error: 0.0,
                track: tracks.remove(&i).unwrap_or_default(),
            },
        );
    }

    // queries
    let mut queries = Vec::with_capacity(spec.n_queries);
    let mut truth = Vec::with_capacity(spec.n_queries);
    let mut q_attempts = 0;
    while queries.len() < spec.n_queries {
        q_attempts += 1;
        if q_attempts > 100 * spec.n_queries {
            return Err(SynthError::InfeasibleSpec("queries see too few points".into()));
        }
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let r = spec.ring_radius + 0.6 * rng.random_range(-spec.ring_jitter..=spec.ring_jitter);
        let z = rng.random_range(-0.3..=0.3);
        let yaw = phi + rng.random_range(-5f64..=5.0).to_radians();
        let pitch = rng.random_range(-3f64..=3.0).to_radians();
        let center = Vector3::new(r * phi.cos(), r * phi.sin(), z);
        let forward = Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
        let pose = looking_pose(&center, &forward);

        let mut obs = Vec::new();
        for &i in &kept {
            let pt = &points[i];
            if let Some((px, depth)) = sees(&pose, &k, &pt.position, &pt.normal) {
                obs.push(Observation {
                    point: i,
                    keypoint: px,
                    depth,
                });
            }
        }
        let mut labels = LabelRaster::filled(k.width, k.height, VOID_LABEL);
        let mut far_first: Vec<&Observation> = obs.iter().collect();
        far_first.sort_by(|a, b| b.depth.total_cmp(&a.depth).then(a.point.cmp(&b.point)));
        for o in far_first {
            labels.fill_disk(&o.keypoint, SPLAT_RADIUS, points[o.point].label);
        }
        for o in &mut obs {
            let kp = o.keypoint + Vector2::new(pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng));
            // stored as f32 on disk
            o.keypoint = Vector2::new(kp.x as f32 as f64, kp.y as f32 as f64);
        }
        obs.retain(|o| k.contains(&o.keypoint) && k.contains(&o.keypoint.add_scalar(0.5)));
        let obs = unique_pixels(obs);
        if obs.len() < MIN_QUERY_KEYPOINTS {
            continue;
        }
        let mut data = Vec::with_capacity(obs.len() * spec.descriptor_dim);
        for o in &obs {
            data.extend(noisy_descriptor(&points[o.point].descriptor, &desc_noise, &mut rng));
        }

        // nearest database cameras first, by position then heading
        let mut order: Vec<usize> = (0..n_db).collect();
        let key = |j: usize| {
            let p = &db_poses[j];
            let zc = p.rotation_matrix().row(2).transpose();
            let ang = zc.dot(&forward).clamp(-1.0, 1.0).acos();
            (p.camera_center() - center).norm() + 3.0 * ang
        };
        let keys: Vec<f64> = (0..n_db).map(key).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));

        let name = format!("query_{:03}", queries.len());
        let condition = if rng.random::<f64>() < spec.night_fraction {
            Condition::Night
        } else {
            Condition::Day
        };
        truth.push(QueryTruth {
            name: name.clone(),
            pose,
            keypoint_points: obs.iter().map(|o| point_id(o.point)).collect(),
        });
        queries.push(QueryImage {
            name,
            intrinsics: k,
            condition,
            keypoints: obs.iter().map(|o| o.keypoint).collect(),
            descriptors: DescriptorSet::new(spec.descriptor_dim, data),
            global: ranked_global(&order, gdim),
            labels,
        });
    }

    Ok(SynthScene {
        dataset: Dataset {
            model,
            classes,
            db,
            queries,
        },
        truth,
        point_labels: kept.iter().map(|&i| (point_id(i), points[i].label)).collect(),
    })
}

/// Database image on the opposite side of the database: the camera nearest
/// to the reflection of `id`'s camera through the centroid of all cameras.
pub(crate) fn far_side(model: &SfmModel, id: ImageId) -> ImageId {
    let centers: Vec<(ImageId, Vector3<f64>)> = model
        .images
        .iter()
        .map(|(i, im)| (*i, im.pose.camera_center()))
        .collect();
    let centroid = centers.iter().map(|c| c.1).sum::<Vector3<f64>>() / centers.len() as f64;
    let target = 2.0 * centroid - model.images[&id].pose.camera_center();
    let mut best = (id, f64::INFINITY);
    for (other, c) in &centers {
        let d = (c - target).norm();
        if d < best.1 {
            best = (*other, d);
        }
    }
    best.0
}

pub(crate) fn index_of_image(model: &SfmModel) -> HashMap<ImageId, usize> {
    model.images.keys().enumerate().map(|(i, id)| (*id, i)).collect()
}
