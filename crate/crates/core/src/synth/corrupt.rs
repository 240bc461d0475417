use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::generate::{far_side, index_of_image, ranked_global};
use super::{CorruptionSpec, SynthScene};
use crate::ingest::ImageId;
use crate::retrieval::rank_database;

/// Outlier keypoints land at least this far from their true pixel.
pub const OUTLIER_MIN_SHIFT_PX: f64 = 20.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryCorruption {
    pub name: String,
    /// Database images forced into the top `retrieval_k`.
    pub forced_far: Vec<String>,
    pub outlier_keypoints: Vec<usize>,
    pub flipped_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionLog {
    pub spec: CorruptionSpec,
    pub queries: Vec<QueryCorruption>,
}

impl CorruptionLog {
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = format!(
            "# wrong_retrieval_rate {} retrieval_k {} descriptor_noise {} label_flip_rate {} outlier_match_rate {} seed {}\n",
            s.wrong_retrieval_rate, s.retrieval_k, s.descriptor_noise, s.label_flip_rate, s.outlier_match_rate, s.seed
        );
        for q in &self.queries {
            let _ = writeln!(out, "{} far_images {} {}", q.name, q.forced_far.len(), q.forced_far.join(" "));
            let kps: Vec<String> = q.outlier_keypoints.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{} outlier_keypoints {} {}", q.name, kps.len(), kps.join(" "));
            let _ = writeln!(out, "{} flipped_pixels {}", q.name, q.flipped_pixels);
        }
        out
    }

    pub fn query(&self, name: &str) -> Option<&QueryCorruption> {
        self.queries.iter().find(|q| q.name == name)
    }
}

/// Applies the four corruption channels to every query. Database side and
/// ground truth are untouched.
pub fn corrupt(scene: &SynthScene, spec: &CorruptionSpec) -> (SynthScene, CorruptionLog) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = scene.clone();
    let model = &scene.dataset.model;
    let classes = &scene.dataset.classes;
    let basis = index_of_image(model);
    let n_db = model.images.len();
    let noise = Normal::new(0.0, spec.descriptor_noise).expect("validated");
    let mut log = Vec::with_capacity(out.dataset.queries.len());

    for (q, truth) in out.dataset.queries.iter_mut().zip(&scene.truth) {
        let mut entry = QueryCorruption {
            name: q.name.clone(),
            ..Default::default()
        };

        let k = spec.retrieval_k.min(n_db);
        let m = (spec.wrong_retrieval_rate * k as f64).round() as usize;
        if m > 0 {
            let ranked = rank_database(
                &q.global,
                scene.dataset.db.iter().map(|(id, d)| (*id, &d.global)),
                n_db,
            )
            .expect("synthetic descriptors agree in dimension");
            let order: Vec<ImageId> = ranked.ids().collect();
            let top: HashSet<ImageId> = order[..k].iter().copied().collect();
            let mut far: Vec<ImageId> = Vec::new();
            for id in &order {
                if far.len() == m {
                    break;
                }
                let f = far_side(model, *id);
                if !top.contains(&f) && !far.contains(&f) {
                    far.push(f);
                }
            }
            let near: Vec<ImageId> = order.iter().copied().filter(|id| !far.contains(id)).collect();
            let (mut ni, mut fi) = (0, 0);
            let mut new_order: Vec<ImageId> = Vec::with_capacity(n_db);
            while new_order.len() < k {
                if ni < k - far.len() {
                    new_order.push(near[ni]);
                    ni += 1;
                }
                if fi < far.len() && new_order.len() < k {
                    new_order.push(far[fi]);
                    fi += 1;
                }
            }
            new_order.extend(near[ni..].iter().copied());
            let idx: Vec<usize> = new_order.iter().map(|id| basis[id]).collect();
            q.global = ranked_global(&idx, q.global.dim());
            entry.forced_far = far.iter().map(|id| model.images[id].name.clone()).collect();
        }

        if spec.label_flip_rate > 0.0 {
            for l in q.labels.labels.iter_mut() {
                if *l != classes.void_id && rng.random::<f64>() < spec.label_flip_rate {
                    *l = rng.random_range(0..classes.len() as u8);
                    entry.flipped_pixels += 1;
                }
            }
        }

        if spec.descriptor_noise > 0.0 {
            for v in q.descriptors.data.iter_mut() {
                *v = (*v as f64 + noise.sample(&mut rng)) as f32;
            }
        }

        if spec.outlier_match_rate > 0.0 {
            let eligible: Vec<usize> = truth
                .keypoint_points
                .iter()
                .enumerate()
                .filter(|(_, p)| scene.point_labels.get(p).is_some_and(|l| !classes.is_dynamic(*l)))
                .map(|(i, _)| i)
                .collect();
            let n_out = (spec.outlier_match_rate * eligible.len() as f64).round() as usize;
            let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, eligible.len(), n_out)
                .into_iter()
                .map(|i| eligible[i])
                .collect();
            chosen.sort_unstable();
            let (w, h) = (q.intrinsics.width as f64, q.intrinsics.height as f64);
            for &i in &chosen {
                let orig = q.keypoints[i];
                q.keypoints[i] = loop {
                    let p = Vector2::new(rng.random_range(2.0..w - 3.0), rng.random_range(2.0..h - 3.0));
                    let p = Vector2::new(p.x as f32 as f64, p.y as f32 as f64);
                    if (p - orig).norm() >= OUTLIER_MIN_SHIFT_PX {
                        break p;
                    }
                };
            }
            entry.outlier_keypoints = chosen;
        }
        log.push(entry);
    }
    (
        out,
        CorruptionLog {
            spec: spec.clone(),
            queries: log,
        },
    )
}
