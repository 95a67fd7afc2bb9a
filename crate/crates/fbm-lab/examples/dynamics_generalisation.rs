//! Partially observed dynamics changes: train on mass/damping scales
//! {0.5x, 1.5x}, evaluate zero-shot on 1.0x (interpolation) and 2.0x
//! (extrapolation).
//!
//!     cargo run --release --example dynamics_generalisation [steps]

use fbm_lab::bfm::Variant;
use fbm_lab::data::BehaviourPolicy;
use fbm_lab::envgen::{make_dynamics_split, DeskEnv, InitialDist, PointMass};
use fbm_lab::evalkit::{dynamics_split_suite, EvalConfig, NetSizes, SuiteConfig};
use fbm_lab::trainer::TrainConfig;

fn main() -> fbm_lab::Result<()> {
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(6_000);
    let env = DeskEnv::Point(PointMass::new(200, 0.98, InitialDist::Uniform)?);
    let split = make_dynamics_split(&[0.5, 1.5], &[1.0, 2.0])?;
    let mut eval = EvalConfig::desk(900);
    eval.labels_k = 4_000;
    let cfg = SuiteConfig {
        runs: vec![],
        seeds: vec![0],
        data_episodes: 40,
        data_seed: 77,
        behaviour: BehaviourPolicy::UniformRandom,
        sizes: NetSizes::compact(),
        train: TrainConfig {
            learning_steps: steps,
            batch: 64,
            lr: 1e-3,
            polyak_tau: 0.05,
            checkpoint_every: (steps / 2).max(1),
            ..TrainConfig::desk(0)
        },
        eval,
        include_oracle_baseline: false,
        normalize_inferred_z: true,
    };
    let out = std::env::temp_dir().join("fbm_dynamics_demo");
    std::fs::remove_dir_all(&out).ok();
    let report = dynamics_split_suite(&env, &split, &[Variant::Fb], &cfg, &out)?;
    println!("trained on {{0.5x, 1.5x}}; zero-shot test scores:");
    for e in &report.entries {
        let kind = if e.test_scale == 1.0 { "interpolation" } else { "extrapolation" };
        println!(
            "  {:<6} at {:.1}x ({kind}): IQM {:>6.2}  CI [{:>6.2}, {:>6.2}]",
            e.variant, e.test_scale, e.iqm, e.ci_lo, e.ci_hi
        );
    }
    println!("\nsummary: {}", report.summary_path.display());
    Ok(())
}
