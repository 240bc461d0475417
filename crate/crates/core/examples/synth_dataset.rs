// Writes a corrupted synthetic dataset to a temporary directory, validates
// it, and prints the corruption log.

use std::fs;

use semloc::ingest::validate_dataset;
use semloc::synth::{synthesize, CorruptionSpec, SceneSpec, SynthSpec};

pub fn run_example() -> Result<usize, Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let spec = SynthSpec {
        scene: SceneSpec {
            n_points: 300,
            n_db_images: 12,
            n_queries: 4,
            ..Default::default()
        },
        corruption: Some(CorruptionSpec {
            label_flip_rate: 0.1,
            outlier_match_rate: 0.2,
            ..Default::default()
        }),
    };
    let scene = synthesize(&spec, dir.path())?;
    println!(
        "{} db images, {} queries, {} points",
        scene.dataset.model.images.len(),
        scene.dataset.queries.len(),
        scene.dataset.model.points.len()
    );
    let report = validate_dataset(dir.path());
    println!("validation: {}", if report.ok() { "ok" } else { "failed" });
    for f in &report.findings {
        println!("  {f:?}");
    }
    print!("{}", fs::read_to_string(dir.path().join("corruption.txt"))?);
    Ok(report.findings.len())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
