//! Zero-shot gridworld control: trains FB on a reward-free gridworld dataset
//! and compares its greedy policies against value iteration for corner-goal
//! tasks and random task embeddings.
//!
//!     cargo run --release --example gridworld_zero_shot [steps]

use std::time::Instant;

use fbm_lab::autodiff::{Graph, Tensor};
use fbm_lab::bfm::{BfmModel, Variant};
use fbm_lab::data::{generate_dataset, BehaviourPolicy};
use fbm_lab::envgen::{
    DeskEnv, DynamicsConfig, Gridworld, InitialDist, OcclusionConfig, Routing,
};
use fbm_lab::evalkit::{model_config_for, NetSizes};
use fbm_lab::oracle::value_iteration;
use fbm_lab::trainer::{train, TrainConfig};

fn main() -> fbm_lab::Result<()> {
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(12_000);
    let gamma = 0.9;
    let grid = Gridworld::new(7, 0.1, 200, gamma, InitialDist::Uniform)?;
    let mdp = grid.to_finite_mdp();
    let env = DeskEnv::Grid(grid.clone());
    let occl = OcclusionConfig::fully_observed();
    let dataset = generate_dataset(
        &env,
        BehaviourPolicy::UniformRandom,
        &occl,
        DynamicsConfig::base(),
        150,
        42,
    )?;

    let mut sizes = NetSizes::compact();
    sizes.d = 16;
    let mut cfg = model_config_for(&env, &occl, Variant::Fb, Routing::None, &sizes, gamma, 3);
    cfg.normalize_inferred_z = true;
    let mut model = BfmModel::build(cfg)?;
    let train_cfg = TrainConfig {
        learning_steps: steps,
        batch: 64,
        lr: 1e-3,
        gamma,
        polyak_tau: 0.05,
        checkpoint_every: steps,
        ..TrainConfig::desk(3)
    };
    let t0 = Instant::now();
    train(&mut model, &dataset, &train_cfg, &std::env::temp_dir().join("fbm_grid_example"))?;
    println!("trained for {steps} steps in {:.0?}", t0.elapsed());

    let BfmModel::Fb(fb) = &model else { unreachable!() };
    let d = fb.cfg.d;

    // B embeddings per state, used for exact task inference under uniform rho
    let mut b_rows = Tensor::zeros(mdp.n_states, d);
    for s in 0..mdp.n_states {
        let st = grid.state_from_index(s);
        let mut g = Graph::new();
        let bp = fb.params.bind_frozen(&mut g);
        let ctx = g.constant(Tensor::row_vector(st.values.clone()));
        let bv = fb.b_forward(&mut g, &bp, ctx);
        b_rows.row_mut(s).copy_from_slice(g.value(bv).row(0));
    }
    let infer = |rewards: &[f64]| -> Tensor {
        let mut z = vec![0.0; d];
        for s in 0..mdp.n_states {
            for (acc, v) in z.iter_mut().zip(b_rows.row(s)) {
                *acc += rewards[s] * v / mdp.n_states as f64;
            }
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let t = (d as f64).sqrt();
            for v in &mut z {
                *v *= t / norm;
            }
        }
        Tensor::row_vector(z)
    };

    println!("\ngreedy-action agreement with value iteration (1% value tolerance):");
    for task in &grid.tasks {
        let rewards = mdp.reward(&task.task_id)?.to_vec();
        let vi = value_iteration(&mdp, &task.task_id, 1e-9)?;
        let q_scale = vi.q.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let z = infer(&rewards);
        let agree = (0..mdp.n_states)
            .filter(|&s| {
                let st = grid.state_from_index(s);
                let cur = Tensor::row_vector(st.values.clone());
                let a = fb.greedy_discrete(&cur, &cur, &z).unwrap();
                vi.is_optimal_action(s, a, mdp.n_actions, 0.01 * q_scale)
            })
            .count() as f64
            / mdp.n_states as f64;
        println!("  {:<8} {:.3}", task.task_id, agree);
    }
    Ok(())
}
