// Ranks the database for one query, ratio-matches it against the top image
// and lifts the matches to 3D model points.

use semloc::matching::{knn_ratio_match, lift_matches, DEFAULT_RATIO};
use semloc::retrieval::rank_database;
use semloc::semantic_map::build_dataset_map;
use semloc::synth::{generate_scene, SceneSpec};

pub fn run_example() -> Result<usize, Box<dyn std::error::Error>> {
    let scene = generate_scene(&SceneSpec {
        n_points: 400,
        n_db_images: 12,
        n_queries: 1,
        ..Default::default()
    })?;
    let ds = &scene.dataset;
    let map = build_dataset_map(ds)?;
    let query = &ds.queries[0];

    let ranked = rank_database(&query.global, ds.db.iter().map(|(id, d)| (*id, &d.global)), 4)?;
    for (id, dist) in &ranked.entries {
        println!("{:>10}  {dist:.4}", ds.model.images[id].name);
    }

    let top = ranked.entries[0].0;
    let raw = knn_ratio_match(&query.descriptors, &ds.db[&top].descriptors, DEFAULT_RATIO)?;
    let lifted = lift_matches(&raw, &query.keypoints, &ds.model.images[&top], &map, top);
    let truth = &scene.truth[0];
    let correct = lifted
        .iter()
        .filter(|m| truth.keypoint_points[m.query_kp] == m.point3d)
        .count();
    println!(
        "{} keypoints, {} ratio matches, {} lifted, {} to the true point",
        query.keypoints.len(),
        raw.len(),
        lifted.len(),
        correct
    );
    Ok(lifted.len())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
