//! Exact ground truth on finite MDPs: successor measures by matrix inversion,
//! value iteration, and belief expansion for a small POMDP.
//!
//!     cargo run --release --example exact_oracles

use fbm_lab::envgen::{Gridworld, InitialDist};
use fbm_lab::oracle::{
    belief_expand, exact_successor_measure, two_state_cycle, uniform_policy, value_iteration,
    FinitePomdp,
};

fn main() -> fbm_lab::Result<()> {
    // the two-state cycle has a closed-form successor measure
    let cycle = two_state_cycle(0.5);
    let m = exact_successor_measure(&cycle, &uniform_policy(&cycle))?;
    println!("two-state cycle, gamma = 0.5:");
    println!("  M[0 -> 0] = {:.6} (exact 2/3)", m[0]);
    println!("  M[0 -> 1] = {:.6} (exact 4/3)", m[1]);
    println!("  row sum   = {:.6} (exact 1/(1-gamma) = 2)", m[0] + m[1]);

    // value iteration on the gridworld corner task
    let grid = Gridworld::new(7, 0.1, 200, 0.95, InitialDist::Uniform)?;
    let mdp = grid.to_finite_mdp();
    let vi = value_iteration(&mdp, "goal_se", 1e-10)?;
    println!("\n7x7 gridworld, goal at the SE corner ({} sweeps):", vi.iterations);
    for row in 0..7 {
        let line: Vec<String> = (0..7)
            .map(|c| format!("{:5.2}", vi.v[row * 7 + c]))
            .collect();
        println!("  {}", line.join(" "));
    }

    // belief expansion of a flickering two-state chain: with p = 1 the
    // beliefs follow open-loop dynamics
    let blind = FinitePomdp::new(two_state_cycle(0.5), 1, vec![1.0, 1.0], vec![0.5, 0.5])?;
    let expanded = belief_expand(&blind, 100)?;
    println!(
        "\nfully flickering cycle: {} reachable belief(s), first = {:?}",
        expanded.beliefs.len(),
        expanded.beliefs[0]
    );
    Ok(())
}
