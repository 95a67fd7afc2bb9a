//! Scratch pilot of the failure-mode suite machinery at small scale.
use std::time::Instant;
use fbm_lab::bfm::Variant;
use fbm_lab::data::BehaviourPolicy;
use fbm_lab::envgen::*;
use fbm_lab::evalkit::{failure_mode_suite, EvalConfig, NetSizes, SuiteConfig};
use fbm_lab::trainer::TrainConfig;

fn main() -> fbm_lab::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8000);
    let mode = std::env::args().nth(2).unwrap_or_else(|| "hidden".into());
    let env = DeskEnv::Point(PointMass::new(200, 0.98, InitialDist::Uniform)?);
    let occl_mode = match mode.as_str() {
        "noisy" | "noisy5" => OcclusionMode::Noisy { sigma: 0.2 },
        "flicker" => OcclusionMode::Flickering { p: 0.2 },
        _ => OcclusionMode::HiddenVelocity,
    };
    let occl = OcclusionConfig::new(occl_mode, Routing::All)?;
    let mut eval = EvalConfig::desk(900);
    eval.labels_k = 4000;
    let arms = match mode.as_str() {
        "noisy5" => vec![
            (Variant::Fb, Routing::All),
            (Variant::Fb, Routing::BackwardOnly),
            (Variant::Fb, Routing::ForwardPolicyOnly),
        ],
        _ => vec![(Variant::FbM, Routing::All), (Variant::Fb, Routing::All)],
    };
    let cfg = SuiteConfig {
        runs: arms,
        seeds: vec![0, 1, 2],
        data_episodes: 60,
        data_seed: 1234,
        behaviour: BehaviourPolicy::UniformRandom,
        sizes: NetSizes::compact(),
        train: TrainConfig {
            learning_steps: steps,
            batch: 64,
            lr: 1e-3,
            polyak_tau: 0.05,
            checkpoint_every: steps / 4,
            ..TrainConfig::desk(0)
        },
        eval,
        include_oracle_baseline: true,
        normalize_inferred_z: true,
    };
    let t0 = Instant::now();
    let out = std::env::temp_dir().join("fbm_probe_suite");
    std::fs::remove_dir_all(&out).ok();
    let suite = failure_mode_suite(&env, &occl, &cfg, &out)?;
    println!("suite took {:.0?}", t0.elapsed());
    for e in &suite.entries {
        println!(
            "{:<10} {:<20} step {:>6}  IQM {:>7.2}  CI [{:>7.2}, {:>7.2}]  norm {:.2}",
            e.variant, e.routing, e.best_step, e.iqm, e.ci_lo, e.ci_hi, e.normalized
        );
    }
    Ok(())
}
