//! Tour of the desk environments and partial-observability wrappers:
//! gridworld slip dynamics, point-mass physics with mass/damping scaling,
//! and the noisy / flickering / hidden-velocity occlusions.
//!
//!     cargo run --release --example envs_and_wrappers

use fbm_lab::envgen::{
    make_dynamics_split, observe, Action, DeskEnv, DynamicsConfig, Gridworld, InitialDist,
    OcclusionConfig, OcclusionMode, PointMass, Routing,
};
use fbm_lab::rng::Rng;

fn main() -> fbm_lab::Result<()> {
    let mut rng = Rng::from_seed(7);

    // gridworld: slip sends 10% of moves sideways
    let grid = DeskEnv::Grid(Gridworld::desk_default());
    let mut state = grid.reset(0);
    println!("gridworld start: {:?}", state.values);
    for step in 0..5 {
        let (next, rewards, _) = grid.step(&state, &Action::Discrete(3), &DynamicsConfig::base(), &mut rng)?;
        println!("  step {step}: move right -> {:?} (goal_se reward {})", next.values, rewards["goal_se"]);
        state = next;
    }

    // point-mass: doubled mass halves the first-step acceleration
    let pm = DeskEnv::Point(PointMass::new(200, 0.98, InitialDist::Fixed)?);
    let rest = pm.reset(0);
    let push = Action::Continuous(vec![1.0, 0.0]);
    let (base, _, _) = pm.step(&rest, &push, &DynamicsConfig::base(), &mut rng)?;
    let (heavy, _, _) = pm.step(&rest, &push, &DynamicsConfig::scaled(2.0)?, &mut rng)?;
    println!("\npoint-mass unit push from rest:");
    println!("  base dynamics     -> vel_x = {}", base.values[2]);
    println!("  2x mass & damping -> vel_x = {}", heavy.values[2]);

    // occlusion wrappers over one true state
    let s = pm.reset(3);
    println!("\ntrue state: {:?}", s.values);
    for mode in [
        OcclusionMode::None,
        OcclusionMode::Noisy { sigma: 0.2 },
        OcclusionMode::Flickering { p: 1.0 },
        OcclusionMode::HiddenVelocity,
    ] {
        let occl = OcclusionConfig::new(mode, Routing::All)?;
        let obs = observe(&s, &occl, &mut rng);
        println!("  {:>15}: {:?} (dropped: {})", mode.id(), obs.values, obs.dropped);
    }

    // the train/test instances of the dynamics-generalisation harness
    let split = make_dynamics_split(&[0.5, 1.5], &[1.0, 2.0])?;
    println!("\ndynamics split: train scales {:?}, test scales {:?}",
        split.train.iter().map(|d| d.mass_scale).collect::<Vec<_>>(),
        split.test.iter().map(|d| d.mass_scale).collect::<Vec<_>>());
    Ok(())
}
