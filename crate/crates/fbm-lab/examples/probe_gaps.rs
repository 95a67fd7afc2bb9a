//! Scratch: how sensitive is argmax agreement to critic error on the 7x7 grid?
use fbm_lab::envgen::{Gridworld, InitialDist};
use fbm_lab::oracle::value_iteration;
use fbm_lab::rng::Rng;

fn main() -> fbm_lab::Result<()> {
    let grid = Gridworld::new(7, 0.1, 200, 0.95, InitialDist::Uniform)?;
    let mdp = grid.to_finite_mdp();
    let mut rng = Rng::from_seed(1);
    for task in ["goal_nw", "random"] {
        let (label, rewards): (String, Vec<f64>) = if task == "random" {
            ("random smooth".into(), (0..49).map(|s| {
                let (r, c) = (s / 7, s % 7);
                ((r as f64 * 0.9).sin() + (c as f64 * 1.3).cos()) * 0.5
            }).collect())
        } else {
            (task.into(), mdp.reward(task)?.to_vec())
        };
        let mut m = mdp.clone();
        m.add_reward("t", rewards)?;
        let vi = value_iteration(&m, "t", 1e-10)?;
        // gap distribution
        let mut gaps: Vec<f64> = (0..49).map(|s| {
            let qs: Vec<f64> = (0..4).map(|a| vi.q[s * 4 + a]).collect();
            let mut sorted = qs.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            sorted[0] - sorted[1]
        }).collect();
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q_scale: f64 = (0..196).map(|i| vi.q[i].abs()).fold(0.0, f64::max);
        println!("{label}: Q scale {:.2}, gap quartiles = {:.4} {:.4} {:.4}",
            q_scale, gaps[12], gaps[24], gaps[36]);
        // agreement of argmax(Q* + noise)
        for (rel_noise, tol_rel) in [(0.001, 0.0), (0.005, 0.0), (0.005, 0.01), (0.01, 0.01), (0.02, 0.01), (0.02, 0.02), (0.05, 0.02)] {
            let sigma = rel_noise * q_scale;
            let tol = if tol_rel == 0.0 { 1e-9 } else { tol_rel * q_scale };
            let mut agree_total = 0.0;
            let trials = 200;
            for _ in 0..trials {
                let agree = (0..49).filter(|&s| {
                    let a_noisy = (0..4).max_by(|&a, &b| {
                        let qa = vi.q[s * 4 + a] + rng.normal() * sigma;
                        let qb = vi.q[s * 4 + b] + rng.normal() * sigma;
                        qa.partial_cmp(&qb).unwrap()
                    }).unwrap();
                    vi.is_optimal_action(s, a_noisy, 4, tol)
                }).count();
                agree_total += agree as f64 / 49.0;
            }
            println!("  rel noise {:.3} tol {:.3} -> mean agreement {:.3}", rel_noise, tol_rel, agree_total / trials as f64);
        }
    }
    Ok(())
}
