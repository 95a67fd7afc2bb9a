//! Offline reward-free datasets: generation with a temporally correlated
//! behaviour policy, single-file storage, context-window slicing, and
//! labelled-set construction.
//!
//!     cargo run --release --example offline_datasets

use fbm_lab::data::{generate_dataset, BehaviourPolicy};
use fbm_lab::envgen::{
    DeskEnv, DynamicsConfig, InitialDist, OcclusionConfig, OcclusionMode, PointMass, Routing,
};
use fbm_lab::rng::Rng;

fn main() -> fbm_lab::Result<()> {
    let env = DeskEnv::Point(PointMass::new(100, 0.98, InitialDist::Uniform)?);
    let occl = OcclusionConfig::new(OcclusionMode::Flickering { p: 0.2 }, Routing::All)?;
    let dataset = generate_dataset(
        &env,
        BehaviourPolicy::ou_default(),
        &occl,
        DynamicsConfig::base(),
        20,
        42,
    )?;
    println!(
        "generated {} episodes, {} transitions, obs dim {}",
        dataset.episodes.len(),
        dataset.transitions(),
        dataset.obs_dim()
    );

    // occlusion is applied at generation time and stored
    let dropped: usize = dataset
        .episodes
        .iter()
        .map(|e| {
            (0..e.steps())
                .filter(|&t| e.observations.row(t).iter().all(|&v| v == 0.0))
                .count()
        })
        .sum();
    println!(
        "stored flicker rate: {:.3} (p = 0.2)",
        dropped as f64 / dataset.transitions() as f64
    );

    // round trip through the single-file format
    let path = std::env::temp_dir().join("example_dataset.fbds");
    dataset.save(&path)?;
    let loaded = fbm_lab::data::OfflineDataset::load(&path)?;
    println!(
        "round trip: {} bytes, identical = {}",
        std::fs::metadata(&path)?.len(),
        loaded.episodes[0].states == dataset.episodes[0].states
    );

    // context-window slicing for TD training
    let mut rng = Rng::from_seed(1);
    let batch = loaded.sample_slices(4, 8, 4, &mut rng)?;
    println!(
        "\nslice batch: {} anchors, forward window L={}, backward window L={}",
        batch.tau_t.len(),
        batch.tau_t[0].len(),
        batch.tau_future[0].len()
    );
    println!(
        "first anchor: {} valid slots, action taken = {:?}",
        batch.tau_t[0].valid_count(),
        batch.actions.row(0)
    );

    // labelled sets pair trajectory windows with rewards at their final state
    let task = &env.tasks()[0];
    let labelled = loaded.build_labelled_set(task, 500, 4, &mut rng)?;
    let positives = labelled.iter().filter(|s| s.reward > 0.0).count();
    println!(
        "\nlabelled set for {}: {} windows, {} positive labels",
        task.task_id,
        labelled.len(),
        positives
    );
    std::fs::remove_file(&path).ok();
    Ok(())
}
