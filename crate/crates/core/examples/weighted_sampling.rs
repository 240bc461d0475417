// Turns per-candidate semantic scores into sampling weights and shows how a
// weighted sampler favors matches from consistent candidates.

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semloc::ingest::{ImageId, PointId};
use semloc::localizer::{assign_weights, ScoredCandidate, WeightedSampler, Weighting};
use semloc::matching::Match2D3D;

fn candidate(image: u32, score: u64, n: usize, first_kp: usize) -> ScoredCandidate {
    let matches = (0..n)
        .map(|i| Match2D3D {
            query_kp: first_kp + i,
            query_px: Vector2::new(i as f64, 0.0),
            point3d: PointId((first_kp + i) as u64),
            source_image: ImageId(image),
        })
        .collect();
    ScoredCandidate {
        image_id: ImageId(image),
        matches,
        temp_pose: None,
        score,
    }
}

pub fn run_example() -> Result<[usize; 2], Box<dyn std::error::Error>> {
    let candidates = [candidate(1, 100, 10, 0), candidate(2, 50, 5, 10)];
    let (weighted, fallback) = assign_weights(&candidates, Weighting::Semantic);
    println!("fallback: {fallback}");
    println!(
        "p for a match from image 1: {}, from image 2: {}",
        weighted[0].p, weighted[14].p
    );

    let p: Vec<f64> = weighted.iter().map(|w| w.p).collect();
    let sampler = WeightedSampler::new(&p).ok_or("no positive weight")?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut hits = [0usize; 2];
    for _ in 0..10_000 {
        let i = sampler.draw(&mut rng);
        hits[usize::from(weighted[i].m.source_image == ImageId(2))] += 1;
    }
    println!("10000 draws: {} from image 1, {} from image 2", hits[0], hits[1]);
    let triple: [usize; 3] = sampler.draw_distinct(&mut rng);
    println!("one minimal sample: {triple:?}");
    Ok(hits)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example().map(|_| ())
}
