//! Trains a memory-free FB agent on the fully observed point-mass, then
//! infers every task from reward-labelled data and rolls the policies out.
//!
//!     cargo run --release --example train_fb_pointmass [steps]

use std::time::Instant;

use fbm_lab::bfm::BfmModel;
use fbm_lab::data::{generate_dataset, BehaviourPolicy};
use fbm_lab::envgen::{
    DeskEnv, DynamicsConfig, InitialDist, OcclusionConfig, PointMass, Routing,
};
use fbm_lab::evalkit::{evaluate_checkpoint, model_config_for, EvalConfig, NetSizes};
use fbm_lab::trainer::{train, TrainConfig};

fn main() -> fbm_lab::Result<()> {
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4_000);
    let seed = 7;
    let env = DeskEnv::Point(PointMass::new(200, 0.98, InitialDist::Uniform)?);
    let occl = OcclusionConfig::fully_observed();

    let t0 = Instant::now();
    let dataset = generate_dataset(
        &env,
        BehaviourPolicy::ou_default(),
        &occl,
        DynamicsConfig::base(),
        60,
        seed,
    )?;
    println!(
        "dataset: {} transitions in {:.1?}",
        dataset.transitions(),
        t0.elapsed()
    );

    let sizes = NetSizes::compact();
    let mut model_cfg = model_config_for(
        &env,
        &occl,
        fbm_lab::bfm::Variant::Fb,
        Routing::None,
        &sizes,
        0.98,
        seed,
    );
    model_cfg.normalize_inferred_z = true;
    let mut model = BfmModel::build(model_cfg)?;
    let train_cfg = TrainConfig {
        learning_steps: steps,
        batch: 64,
        lr: 1e-3,
        polyak_tau: std::env::var("PROBE_TAU").ok().and_then(|v| v.parse().ok()).unwrap_or(0.01),
        checkpoint_every: steps,
        ..TrainConfig::desk(seed)
    };
    let out_dir = std::env::temp_dir().join("fbm_example_train_fb");
    let t1 = Instant::now();
    let outcome = train(&mut model, &dataset, &train_cfg, &out_dir)?;
    let per_step = t1.elapsed().as_secs_f64() / steps as f64 * 1000.0;
    println!(
        "trained {steps} steps in {:.1?} ({per_step:.2} ms/step); critic loss {:.4}",
        t1.elapsed(),
        outcome.final_critic_loss
    );

    let t2 = Instant::now();
    let rows = evaluate_checkpoint(
        &model,
        &env,
        &occl,
        &DynamicsConfig::base(),
        &dataset,
        &EvalConfig::desk(seed),
        seed,
        steps,
    )?;
    println!("evaluation took {:.1?}", t2.elapsed());
    println!("\ntask                 IQM over 10 rollouts");
    for row in &rows {
        println!("{:<20} {:>8.2}", row.task, row.iqm);
    }
    let all: Vec<f64> = rows.iter().map(|r| r.iqm).collect();
    println!(
        "\nall-task IQM: {:.2}",
        fbm_lab::evalkit::stats::iqm(&all)?
    );
    Ok(())
}
