// Labels the points of a synthetic model by majority vote and prints what
// was kept, what was removed and the viewing statistics of a few points.

use std::collections::BTreeMap;

use semloc::semantic_map::build_dataset_map;
use semloc::synth::{generate_scene, SceneSpec};

pub fn run_example() -> Result<usize, Box<dyn std::error::Error>> {
    let scene = generate_scene(&SceneSpec {
        n_points: 400,
        n_db_images: 12,
        n_queries: 2,
        dynamic_fraction: 0.1,
        ..Default::default()
    })?;
    let map = build_dataset_map(&scene.dataset)?;
    let r = &map.removed;
    println!(
        "{} model points -> {} kept; removed {} dynamic, {} all-void, {} degenerate",
        scene.dataset.model.points.len(),
        map.len(),
        r.dynamic,
        r.all_void,
        r.degenerate
    );

    let mut per_class: BTreeMap<u8, usize> = BTreeMap::new();
    for p in map.points() {
        *per_class.entry(p.label).or_default() += 1;
    }
    for (label, n) in &per_class {
        println!("  {:>14}: {n}", map.classes.names[*label as usize]);
    }
    for p in map.points().iter().take(3) {
        println!(
            "point {:?}: band [{:.2}, {:.2}] m, cone {:.1} deg, {} views",
            p.id,
            p.d_min,
            p.d_max,
            p.theta.to_degrees(),
            p.track_len
        );
    }
    Ok(map.len())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
