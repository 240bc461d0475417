//! Runs every example and checks what it returns.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));
        }
    };
}

example!(build_map);
example!(evaluate_poses);
example!(localize_synthetic);
example!(pose_solvers);
example!(retrieval_and_matching);
example!(semantic_vs_uniform);
example!(synth_dataset);
example!(weighted_sampling);

#[test]
fn synth_dataset_validates() {
    assert_eq!(synth_dataset::run_example().unwrap(), 0);
}

#[test]
fn build_map_keeps_static_points() {
    assert!(build_map::run_example().unwrap() > 300);
}

#[test]
fn retrieval_and_matching_lifts_matches() {
    assert!(retrieval_and_matching::run_example().unwrap() >= 12);
}

#[test]
fn pose_solvers_refine_to_noise_level() {
    let rms = pose_solvers::run_example().unwrap();
    // unit-variance pixel noise in two axes
    assert!(rms < 2.0, "{rms}");
}

#[test]
fn weighted_sampling_follows_weights() {
    let [a, b] = weighted_sampling::run_example().unwrap();
    assert_eq!(a + b, 10_000);
    assert!((a as f64 / 10_000.0 - 0.8).abs() < 0.02);
}

#[test]
fn evaluate_poses_buckets() {
    assert_eq!(evaluate_poses::run_example().unwrap(), [25.0, 50.0, 75.0]);
}

#[test]
fn localize_synthetic_is_fine() {
    let report = localize_synthetic::run_example().unwrap();
    assert!(report.summary_for("all").unwrap().fine >= 95.0);
}

#[test]
fn semantic_weighting_beats_uniform() {
    let [semantic, uniform] = semantic_vs_uniform::run_example().unwrap();
    assert!(semantic > uniform, "{semantic} vs {uniform}");
}
