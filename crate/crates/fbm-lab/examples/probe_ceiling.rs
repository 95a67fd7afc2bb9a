//! Scratch: attainable returns on point-mass velocity and goal tasks.
use fbm_lab::envgen::*;
use fbm_lab::rng::Rng;

fn rollout(env: &DeskEnv, task: &TaskReward, seed: u64, policy: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let mut rng = Rng::from_seed(seed);
    let mut state = env.reset_with(&mut rng);
    let mut ret = 0.0;
    for _ in 0..200 {
        let a = Action::Continuous(policy(&state.values));
        let (next, rew, _) = env.step(&state, &a, &DynamicsConfig::base(), &mut rng).unwrap();
        let r = rew[&task.task_id];
        ret += r;
        state = next;
        if task.is_goal() && r >= 1.0 { break; }
    }
    ret
}

fn main() {
    let env = DeskEnv::Point(PointMass::desk_default());
    let tasks = env.tasks().to_vec();
    let vel_px = tasks.iter().find(|t| t.task_id == "vel_px").unwrap();
    let goal_ne = tasks.iter().find(|t| t.task_id == "goal_ne").unwrap();

    let avg = |f: &dyn Fn(&[f64]) -> Vec<f64>, task: &TaskReward| -> f64 {
        (0..20).map(|s| rollout(&env, task, s, f)).sum::<f64>() / 20.0
    };

    let constant_px = |_s: &[f64]| vec![1.0, 0.0];
    let constant_nx = |_s: &[f64]| vec![-1.0, 0.0];
    let damp_y = |s: &[f64]| vec![1.0, (-2.0 * s[3]).clamp(-1.0, 1.0)];
    // full bang-bang: push +x always; when close to +x wall and fast, brake
    let smart = |s: &[f64]| {
        let ax = if s[0] > 0.55 && s[2] > 0.4 { -1.0 } else { 1.0 };
        vec![ax, (-2.0 * s[3]).clamp(-1.0, 1.0)]
    };
    let random = |_s: &[f64]| vec![0.0, 0.0];
    let goal_bang = |s: &[f64]| {
        let dx: f64 = 0.8 - s[0];
        let dy: f64 = 0.8 - s[1];
        vec![
            (4.0 * dx - 1.2 * s[2]).clamp(-1.0, 1.0),
            (4.0 * dy - 1.2 * s[3]).clamp(-1.0, 1.0),
        ]
    };
    println!("vel_px: zero force      = {:.1}", avg(&random, vel_px));
    println!("vel_px: constant +x     = {:.1}", avg(&constant_px, vel_px));
    println!("vel_px: constant -x     = {:.1}", avg(&constant_nx, vel_px));
    println!("vel_px: +x, damp y      = {:.1}", avg(&damp_y, vel_px));
    println!("vel_px: brake-at-wall   = {:.1}", avg(&smart, vel_px));
    let shuttle = |s: &[f64]| {
        let ax: f64 = if s[0] > 0.6 {
            -1.0
        } else if s[0] < -0.6 {
            1.0
        } else if s[2] >= 0.0 {
            1.0
        } else {
            -1.0
        };
        vec![ax, (-2.0 * s[3]).clamp(-1.0, 1.0)]
    };
    println!("vel_px: shuttle         = {:.1}", avg(&shuttle, vel_px));
    println!("goal_ne: pd control     = {:.2}", avg(&goal_bang, goal_ne));
    println!("goal_ne: zero force     = {:.2}", avg(&random, goal_ne));
}
