//! Scratch pilot: z-conditioned tabular FB on the 7x7 gridworld vs value iteration.
use std::time::Instant;
use fbm_lab::bfm::tabular::{TabularFbConfig, TabularZFb};
use fbm_lab::envgen::{Gridworld, InitialDist};
use fbm_lab::oracle::value_iteration;
use fbm_lab::rng::Rng;

fn main() -> fbm_lab::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let d: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let grid = Gridworld::new(7, 0.1, 200, 0.95, InitialDist::Uniform)?;
    let mdp = grid.to_finite_mdp();
    let mut zfb = TabularZFb::init(&mdp, d, 5)?;
    let mut cfg = TabularFbConfig::new(d, 5);
    cfg.steps = steps;
    cfg.lr = std::env::var("PT_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(5e-3);
    cfg.polyak_tau = std::env::var("PT_TAU").ok().and_then(|v| v.parse().ok()).unwrap_or(0.1);
    cfg.z_batch = std::env::var("PT_ZB").ok().and_then(|v| v.parse().ok()).unwrap_or(4);
    let t0 = Instant::now();
    let trace = zfb.train(&mdp, &cfg)?;
    println!("trained {steps} steps d={d} in {:.1?} (loss {:.3} -> {:.3})", t0.elapsed(), trace[0], trace[trace.len()-1]);

    // B covariance conditioning
    let b = zfb.b_matrix();
    let mut cov_err = 0.0;
    for i in 0..d { for j in 0..d {
        let mut c = 0.0;
        for s_i in 0..mdp.n_states { c += b.get(s_i, i) * b.get(s_i, j); }
        c /= mdp.n_states as f64;
        let target = if i == j { 1.0 } else { 0.0 };
        cov_err += (c - target) * (c - target);
    }}
    println!("||C - I||_F = {:.4}", cov_err.sqrt());
    let mut rng = Rng::from_seed(99);
    let mut total_agree = 0.0;
    for probe in 0..5 {
        let z_star = rng.sphere_point(d, (d as f64).sqrt());
        let rewards: Vec<f64> = (0..mdp.n_states)
            .map(|s| b.row(s).iter().zip(&z_star).map(|(x, y)| x * y).sum())
            .collect();
        let mut m = mdp.clone();
        m.add_reward("probe", rewards.clone())?;
        let vi = value_iteration(&m, "probe", 1e-9)?;
        let z = zfb.infer_z(&rewards)?;
        let greedy = zfb.greedy_actions(&z);
        let agree = (0..m.n_states)
            .filter(|&s| vi.is_optimal_action(s, greedy[s], m.n_actions, 1e-9))
            .count() as f64 / m.n_states as f64;
        println!("  linear reward {probe}: argmax agreement {:.3}", agree);
        total_agree += agree;
    }
    for task in &grid.tasks {
        let rewards = mdp.reward(&task.task_id)?.to_vec();
        let vi = value_iteration(&mdp, &task.task_id, 1e-9)?;
        let z = zfb.infer_z(&rewards)?;
        let greedy = zfb.greedy_actions(&z);
        let agree = (0..mdp.n_states)
            .filter(|&s| vi.is_optimal_action(s, greedy[s], mdp.n_actions, 1e-9))
            .count() as f64 / mdp.n_states as f64;
        println!("  {}: argmax agreement {:.3}", task.task_id, agree);
        total_agree += agree;
    }
    println!("mean agreement: {:.3}", total_agree / 9.0);
    Ok(())
}
