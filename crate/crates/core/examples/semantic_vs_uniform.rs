// Localizes a scene whose retrieval lists are half made of far-side images
// that share descriptors with the true neighbors. Semantic weighting is
// compared with uniform sampling on the same seed.

use semloc::eval::{evaluate, ThresholdBuckets};
use semloc::localizer::{Localizer, LocalizerConfig};
use semloc::retrieval::RetrievalConfig;
use semloc::semantic_map::build_dataset_map;
use semloc::synth::{corrupt, generate_scene, CorruptionSpec, SceneSpec};

pub fn run_example() -> Result<[f64; 2], Box<dyn std::error::Error>> {
    let scene = generate_scene(&SceneSpec {
        n_points: 800,
        n_db_images: 24,
        n_queries: 20,
        mirrored_descriptors: true,
        seed: 3,
        ..Default::default()
    })?;
    let (scene, _) = corrupt(
        &scene,
        &CorruptionSpec {
            wrong_retrieval_rate: 0.5,
            retrieval_k: 10,
            ..Default::default()
        },
    );
    let ds = &scene.dataset;
    let map = build_dataset_map(ds)?;
    let retrieval = RetrievalConfig { k_day: 10, k_night: 10 };

    let mut fine = [0.0; 2];
    for (i, uniform) in [false, true].into_iter().enumerate() {
        let cfg = LocalizerConfig {
            uniform_weights: uniform,
            rng_seed: 11,
            ..Default::default()
        };
        let results = Localizer::new(ds, &map, retrieval, cfg).localize_all(&ds.queries);
        let poses = ds
            .queries
            .iter()
            .zip(&results)
            .filter_map(|(q, r)| r.pose.map(|p| (q.name.clone(), p)))
            .collect();
        let report = evaluate(&poses, &scene.ground_truth(), None, &ThresholdBuckets::default());
        let all = report.summary_for("all").expect("always present");
        println!(
            "{:>8}: fine {:5.1}%  medium {:5.1}%  coarse {:5.1}%",
            if uniform { "uniform" } else { "semantic" },
            all.fine,
            all.medium,
            all.coarse
        );
        fine[i] = all.fine;
    }
    Ok(fine)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
