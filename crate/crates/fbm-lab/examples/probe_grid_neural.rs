//! Scratch pilot: neural FB (discrete actions) on the 7x7 gridworld vs VI.
use std::time::Instant;
use fbm_lab::autodiff::{Graph, Tensor};
use fbm_lab::bfm::{BfmModel, Variant};
use fbm_lab::data::{generate_dataset, BehaviourPolicy};
use fbm_lab::envgen::*;
use fbm_lab::evalkit::{model_config_for, NetSizes};
use fbm_lab::oracle::value_iteration;
use fbm_lab::rng::Rng;
use fbm_lab::trainer::{train, TrainConfig};

fn main() -> fbm_lab::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8000);
    let gamma: f64 = std::env::var("PG_GAMMA").ok().and_then(|v| v.parse().ok()).unwrap_or(0.95);
    let grid = Gridworld::new(7, 0.1, 200, gamma, InitialDist::Uniform)?;
    let mdp = grid.to_finite_mdp();
    let env = DeskEnv::Grid(grid.clone());
    let occl = OcclusionConfig::fully_observed();
    let dataset = generate_dataset(&env, BehaviourPolicy::UniformRandom, &occl, DynamicsConfig::base(), 150, 42)?;
    let mut sizes = NetSizes::compact();
    sizes.d = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    sizes.l_forward = 4; sizes.l_backward = 4;
    let mut cfgm = model_config_for(&env, &occl, Variant::Fb, Routing::None, &sizes, gamma, 3);
    cfgm.normalize_inferred_z = true;
    let mut model = BfmModel::build(cfgm)?;
    let tc = TrainConfig {
        learning_steps: steps,
        batch: std::env::var("PG_BATCH").ok().and_then(|v| v.parse().ok()).unwrap_or(64),
        lr: std::env::var("PG_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-3), gamma,
        polyak_tau: 0.05, checkpoint_every: steps, smooth_std: 0.0,
        ..TrainConfig::desk(3)
    };
    let t0 = Instant::now();
    train(&mut model, &dataset, &tc, &std::env::temp_dir().join("fbm_probe_gridn"))?;
    println!("trained {} steps in {:.0?}", steps, t0.elapsed());

    let BfmModel::Fb(fb) = &model else { unreachable!() };
    let d = fb.cfg.d;
    // B values per state (privileged routing none -> B input is the state)
    let b_rows = {
        let mut out = Tensor::zeros(mdp.n_states, d);
        for s in 0..mdp.n_states {
            let st = grid.state_from_index(s);
            let mut g = Graph::new();
            let bp = fb.params.bind_frozen(&mut g);
            let ctx = g.constant(Tensor::row_vector(st.values.clone()));
            let bv = fb.b_forward(&mut g, &bp, ctx);
            out.row_mut(s).copy_from_slice(g.value(bv).row(0));
        }
        out
    };
    let greedy_for = |z: &Tensor| -> Vec<usize> {
        (0..mdp.n_states)
            .map(|s| {
                let st = grid.state_from_index(s);
                let cur = Tensor::row_vector(st.values.clone());
                fb.greedy_discrete(&cur, &cur, z).unwrap()
            })
            .collect()
    };
    let infer = |rewards: &[f64]| -> Tensor {
        let mut z = vec![0.0; d];
        for s in 0..mdp.n_states {
            for (acc, v) in z.iter_mut().zip(b_rows.row(s)) {
                *acc += rewards[s] * v / mdp.n_states as f64;
            }
        }
        let norm = z.iter().map(|v| v*v).sum::<f64>().sqrt();
        let t = (d as f64).sqrt();
        if norm > 1e-12 { for v in &mut z { *v *= t / norm; } }
        Tensor::row_vector(z)
    };
    let mut rng = Rng::from_seed(99);
    let mut total = 0.0;
    for probe in 0..5 {
        let z_star = rng.sphere_point(d, (d as f64).sqrt());
        let rewards: Vec<f64> = (0..mdp.n_states)
            .map(|s| b_rows.row(s).iter().zip(&z_star).map(|(x, y)| x * y).sum())
            .collect();
        let mut m = mdp.clone();
        m.add_reward("probe", rewards.clone())?;
        let vi = value_iteration(&m, "probe", 1e-9)?;
        let q_scale = vi.q.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let greedy_direct = greedy_for(&Tensor::row_vector(z_star.clone()));
        let greedy_inf = greedy_for(&infer(&rewards));
        let agree = (0..m.n_states)
            .filter(|&s| vi.is_optimal_action(s, greedy_direct[s], m.n_actions, 0.01 * q_scale))
            .count() as f64 / m.n_states as f64;
        let agree_inf = (0..m.n_states)
            .filter(|&s| vi.is_optimal_action(s, greedy_inf[s], m.n_actions, 0.01 * q_scale))
            .count() as f64 / m.n_states as f64;
        println!("  linear {probe}: direct {:.3}, inferred {:.3}", agree, agree_inf);
        total += agree;
    }
    for task in &grid.tasks {
        let rewards = mdp.reward(&task.task_id)?.to_vec();
        let vi = value_iteration(&mdp, &task.task_id, 1e-9)?;
        let q_scale = vi.q.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let greedy = greedy_for(&infer(&rewards));
        let agree = (0..mdp.n_states)
            .filter(|&s| vi.is_optimal_action(s, greedy[s], mdp.n_actions, 0.01 * q_scale))
            .count() as f64 / mdp.n_states as f64;
        println!("  {}: {:.3}", task.task_id, agree);
        total += agree;
    }
    println!("mean agreement: {:.3}", total / 9.0);
    Ok(())
}
