//! Scratch probe: FB-M vs memory-free FB vs oracle-state FB on hidden velocity.
use std::time::Instant;
use fbm_lab::bfm::{BfmModel, Variant};
use fbm_lab::data::{generate_dataset, BehaviourPolicy};
use fbm_lab::envgen::*;
use fbm_lab::evalkit::{evaluate_checkpoint, model_config_for, EvalConfig, NetSizes};
use fbm_lab::trainer::{train, TrainConfig};

fn main() -> fbm_lab::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6000);
    let variant = match std::env::args().nth(2).as_deref() {
        Some("fb_m") => Variant::FbM, Some("fb_stack") => Variant::FbStack, _ => Variant::Fb };
    let routing = match std::env::args().nth(3).as_deref() {
        Some("none") => Routing::None, _ => Routing::All };
    let seed: u64 = std::env::var("PROBE_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(11);
    let env = DeskEnv::Point(PointMass::new(200, 0.98, InitialDist::Uniform)?);
    let occl = OcclusionConfig::new(OcclusionMode::HiddenVelocity, routing)?;
    let dataset = generate_dataset(&env, BehaviourPolicy::ou_default(), &occl, DynamicsConfig::base(), 60, seed)?;
    let mut cfgm = model_config_for(&env, &occl, variant, routing, &NetSizes::compact(), 0.98, seed);
    cfgm.normalize_inferred_z = true;
    let mut model = BfmModel::build(cfgm)?;
    let tc = TrainConfig { learning_steps: steps, batch: 64, lr: 1e-3, polyak_tau: 0.05, checkpoint_every: steps, ..TrainConfig::desk(seed) };
    let t0 = Instant::now();
    train(&mut model, &dataset, &tc, &std::env::temp_dir().join("fbm_probe_mem"))?;
    let ms = t0.elapsed().as_secs_f64()/steps as f64*1000.0;
    let mut ec = EvalConfig::desk(seed); ec.labels_k = 4000;
    let rows = evaluate_checkpoint(&model, &env, &occl, &DynamicsConfig::base(), &dataset, &ec, seed, steps)?;
    let all: Vec<f64> = rows.iter().map(|r| r.iqm).collect();
    print!("{:?} routing={:?} {:.1}ms/step |", variant, routing, ms);
    for r in &rows { print!(" {}={:.1}", &r.task[..6.min(r.task.len())], r.iqm); }
    println!(" | all-task IQM = {:.2}", fbm_lab::evalkit::stats::iqm(&all)?);
    Ok(())
}
