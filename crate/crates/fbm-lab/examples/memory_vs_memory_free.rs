//! The memory-benefit comparison at demo scale: FB-M (GRU) against
//! memory-free FB on the hidden-velocity point-mass, with the fully observed
//! FB reference, one seed each.
//!
//!     cargo run --release --example memory_vs_memory_free [steps]
//!
//! The full five-seed harness with bootstrap CIs is exercised by the
//! acceptance suite; this example runs a single seed per arm to stay fast.

use fbm_lab::bfm::Variant;
use fbm_lab::data::BehaviourPolicy;
use fbm_lab::envgen::{
    DeskEnv, InitialDist, OcclusionConfig, OcclusionMode, PointMass, Routing,
};
use fbm_lab::evalkit::{failure_mode_suite, EvalConfig, NetSizes, SuiteConfig};
use fbm_lab::trainer::TrainConfig;

fn main() -> fbm_lab::Result<()> {
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8_000);
    let env = DeskEnv::Point(PointMass::new(200, 0.98, InitialDist::Uniform)?);
    let occl = OcclusionConfig::new(OcclusionMode::HiddenVelocity, Routing::All)?;
    let mut eval = EvalConfig::desk(900);
    eval.labels_k = 4_000;
    let cfg = SuiteConfig {
        runs: vec![(Variant::FbM, Routing::All), (Variant::Fb, Routing::All)],
        seeds: vec![0],
        data_episodes: 60,
        data_seed: 1234,
        behaviour: BehaviourPolicy::UniformRandom,
        sizes: NetSizes::compact(),
        train: TrainConfig {
            learning_steps: steps,
            batch: 64,
            lr: 1e-3,
            polyak_tau: 0.05,
            checkpoint_every: (steps / 4).max(1),
            ..TrainConfig::desk(0)
        },
        eval,
        include_oracle_baseline: true,
        normalize_inferred_z: true,
    };
    let out = std::env::temp_dir().join("fbm_memory_demo");
    std::fs::remove_dir_all(&out).ok();
    let suite = failure_mode_suite(&env, &occl, &cfg, &out)?;
    println!("hidden-velocity point-mass, best checkpoint per arm:");
    for e in &suite.entries {
        println!(
            "  {:<8} routing {:<18} IQM {:>6.2}  CI [{:>6.2}, {:>6.2}]  vs fully observed: {:.2}",
            e.variant, e.routing, e.iqm, e.ci_lo, e.ci_hi, e.normalized
        );
    }
    println!("\nrows: {}", suite.rows_path.display());
    println!("summary: {}", suite.summary_path.display());
    Ok(())
}
