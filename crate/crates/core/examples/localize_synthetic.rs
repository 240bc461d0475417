// Generates a clean scene, builds the semantic map, localizes every query
// and prints the precision buckets.

use std::time::Instant;

use semloc::eval::{evaluate, EvalReport, ThresholdBuckets};
use semloc::localizer::{Localizer, LocalizerConfig};
use semloc::retrieval::RetrievalConfig;
use semloc::semantic_map::build_dataset_map;
use semloc::synth::{generate_scene, SceneSpec};

pub fn run_example() -> Result<EvalReport, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let scene = generate_scene(&SceneSpec {
        n_points: 600,
        n_db_images: 24,
        n_queries: 12,
        pixel_noise: 0.5,
        seed: 1,
        ..Default::default()
    })?;
    let ds = &scene.dataset;
    let map = build_dataset_map(ds)?;
    println!(
        "map: {} points kept, {} dynamic removed",
        map.len(),
        map.removed.dynamic
    );

    let retrieval = RetrievalConfig { k_day: 8, k_night: 12 };
    let localizer = Localizer::new(ds, &map, retrieval, LocalizerConfig::default());
    let results = localizer.localize_all(&ds.queries);
    let poses = ds
        .queries
        .iter()
        .zip(&results)
        .filter_map(|(q, r)| r.pose.map(|p| (q.name.clone(), p)))
        .collect();
    let report = evaluate(&poses, &scene.ground_truth(), None, &ThresholdBuckets::default());
    for row in &report.rows {
        match (row.translation_error_m, row.rotation_error_deg) {
            (Some(t), Some(r)) => println!("{}: {:.4} m {:.4} deg", row.name, t, r),
            _ => println!("{}: not localized", row.name),
        }
    }
    let all = report.summary_for("all").expect("always present");
    println!(
        "fine {:.1}%  medium {:.1}%  coarse {:.1}%  ({:.2?})",
        all.fine,
        all.medium,
        all.coarse,
        start.elapsed()
    );
    Ok(report)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
