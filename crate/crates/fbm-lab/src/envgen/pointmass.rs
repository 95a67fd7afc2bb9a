//! A damped point-mass in a [-1, 1]^2 box with semi-implicit Euler dynamics.

use super::{
    Action, ActionSpace, DynamicsConfig, InitialDist, MarkovState, PomdpSpec, TaskReward,
};
use crate::error::{FbmError, Result};
use crate::rng::Rng;

pub const DT: f64 = 0.05;
pub const GRAVITY: f64 = 1.0;
pub const MASS: f64 = 1.0;
pub const DAMPING: f64 = 0.5;
pub const WALL: f64 = 1.0;
pub const V_MAX: f64 = 2.0;

/// State is [pos_x, pos_y, vel_x, vel_y]. Actions are forces in [-1, 1]^2.
///
/// vel' = clip(vel + (a*g/(m*mass_scale) - c*damping_scale*vel)*dt, +-V_MAX)
/// pos' = pos + vel'*dt, reflected at the walls (velocity flips on reflection).
#[derive(Clone, Debug)]
pub struct PointMass {
    pub episode_length: usize,
    pub discount: f64,
    pub initial: InitialDist,
    pub tasks: Vec<TaskReward>,
}

impl PointMass {
    pub fn new(episode_length: usize, discount: f64, initial: InitialDist) -> Result<Self> {
        let mut env = PointMass {
            episode_length,
            discount,
            initial,
            tasks: Vec::new(),
        };
        env.tasks = PointMass::default_tasks();
        env.spec().validate()?;
        Ok(env)
    }

    pub fn desk_default() -> Self {
        PointMass::new(200, 0.98, InitialDist::Uniform).unwrap()
    }

    /// Four sparse corner-goal tasks plus four dense velocity tasks.
    pub fn default_tasks() -> Vec<TaskReward> {
        vec![
            TaskReward::goal("goal_ne", vec![0.8, 0.8], 0.15),
            TaskReward::goal("goal_nw", vec![-0.8, 0.8], 0.15),
            TaskReward::goal("goal_se", vec![0.8, -0.8], 0.15),
            TaskReward::goal("goal_sw", vec![-0.8, -0.8], 0.15),
            TaskReward::dense_velocity("vel_px", vec![1.0, 0.0]),
            TaskReward::dense_velocity("vel_nx", vec![-1.0, 0.0]),
            TaskReward::dense_velocity("vel_py", vec![0.0, 1.0]),
            TaskReward::dense_velocity("vel_ny", vec![0.0, -1.0]),
        ]
    }

    pub fn spec(&self) -> PomdpSpec {
        PomdpSpec {
            state_dim: 4,
            obs_dim: 4,
            action_space: ActionSpace::Continuous(2),
            discount: self.discount,
            episode_length: self.episode_length,
            initial: self.initial,
        }
    }

    pub fn reset_with(&self, rng: &mut Rng) -> MarkovState {
        match self.initial {
            InitialDist::Fixed => MarkovState::new(vec![0.0, 0.0, 0.0, 0.0]),
            InitialDist::Uniform => {
                // random initial velocity keeps the hidden-velocity setting an
                // honest POMDP: the state is not a function of actions alone
                let px = rng.uniform_in(-0.8, 0.8);
                let py = rng.uniform_in(-0.8, 0.8);
                let vx = rng.uniform_in(-1.0, 1.0);
                let vy = rng.uniform_in(-1.0, 1.0);
                MarkovState::new(vec![px, py, vx, vy])
            }
        }
    }

    pub fn step(
        &self,
        state: &MarkovState,
        action: &Action,
        dynamics: &DynamicsConfig,
    ) -> Result<MarkovState> {
        let Action::Continuous(a) = action else {
            return Err(FbmError::contract(
                "point-mass takes continuous actions".to_string(),
            ));
        };
        if a.len() != 2 {
            return Err(FbmError::contract(format!(
                "action has {} components, expected 2",
                a.len()
            )));
        }
        if a.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(FbmError::contract(format!(
                "action {a:?} out of bounds [-1, 1]"
            )));
        }
        let mut next = state.values.clone();
        for axis in 0..2 {
            let vel = state.values[2 + axis];
            let accel =
                a[axis] * GRAVITY / (MASS * dynamics.mass_scale) - DAMPING * dynamics.damping_scale * vel;
            let mut new_vel = (vel + accel * DT).clamp(-V_MAX, V_MAX);
            let mut new_pos = state.values[axis] + new_vel * DT;
            // walls absorb the normal velocity component (dead walls); the
            // overshoot reflects back inside the box
            if new_pos > WALL {
                new_pos = 2.0 * WALL - new_pos;
                new_vel = 0.0;
            } else if new_pos < -WALL {
                new_pos = -2.0 * WALL - new_pos;
                new_vel = 0.0;
            }
            next[axis] = new_pos;
            next[2 + axis] = new_vel;
        }
        Ok(MarkovState::new(next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rest_at_origin() -> MarkovState {
        MarkovState::new(vec![0.0, 0.0, 0.0, 0.0])
    }

    #[test]
    fn zero_force_at_rest_is_a_fixed_point() {
        let env = PointMass::desk_default();
        let next = env
            .step(
                &rest_at_origin(),
                &Action::Continuous(vec![0.0, 0.0]),
                &DynamicsConfig::base(),
            )
            .unwrap();
        assert_eq!(next.values, vec![0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn doubled_mass_halves_first_step_velocity() {
        let env = PointMass::desk_default();
        let a = Action::Continuous(vec![1.0, 0.0]);
        let base = env
            .step(&rest_at_origin(), &a, &DynamicsConfig::base())
            .unwrap();
        let heavy = env
            .step(&rest_at_origin(), &a, &DynamicsConfig::scaled(2.0).unwrap())
            .unwrap();
        assert_eq!(heavy.values[2], base.values[2] / 2.0);
    }

    #[test]
    fn identity_scaling_matches_base_trajectory_bitwise() {
        let env = PointMass::desk_default();
        let id = DynamicsConfig::new(1.0, 1.0).unwrap();
        let mut rng_a = Rng::from_seed(3);
        let mut rng_b = Rng::from_seed(3);
        let mut sa = env.reset_with(&mut rng_a);
        let mut sb = env.reset_with(&mut rng_b);
        let mut act_rng = Rng::from_seed(11);
        for _ in 0..100 {
            let a = Action::Continuous(vec![
                act_rng.uniform_in(-1.0, 1.0),
                act_rng.uniform_in(-1.0, 1.0),
            ]);
            sa = env.step(&sa, &a, &DynamicsConfig::base()).unwrap();
            sb = env.step(&sb, &a, &id).unwrap();
            assert_eq!(sa.values, sb.values);
        }
    }

    #[test]
    fn states_stay_in_bounds() {
        let env = PointMass::desk_default();
        let mut rng = Rng::from_seed(5);
        let mut s = env.reset_with(&mut rng);
        for _ in 0..2000 {
            let a = Action::Continuous(vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)]);
            s = env.step(&s, &a, &DynamicsConfig::base()).unwrap();
            assert!(s.values[0].abs() <= WALL && s.values[1].abs() <= WALL);
            assert!(s.values[2].abs() <= V_MAX && s.values[3].abs() <= V_MAX);
        }
    }

    #[test]
    fn out_of_bounds_action_rejected() {
        let env = PointMass::desk_default();
        let err = env
            .step(
                &rest_at_origin(),
                &Action::Continuous(vec![1.5, 0.0]),
                &DynamicsConfig::base(),
            )
            .unwrap_err();
        assert!(err.to_string().contains("out of bounds"));
    }

    #[test]
    fn reset_mean_matches_initial_distribution() {
        // positions uniform in [-0.8, 0.8], velocities uniform in [-1, 1]:
        // mean 0 with se = b/sqrt(3 n) per axis
        let env = PointMass::desk_default();
        let n = 10_000;
        let mut rng = Rng::from_seed(21);
        let mut sums = [0.0f64; 4];
        for _ in 0..n {
            let s = env.reset_with(&mut rng);
            for (acc, v) in sums.iter_mut().zip(&s.values) {
                *acc += v;
            }
        }
        for (axis, sum) in sums.iter().enumerate() {
            let b = if axis < 2 { 0.8 } else { 1.0 };
            let se = b / (3.0 * n as f64).sqrt();
            let mean = sum / n as f64;
            assert!(mean.abs() < 3.0 * se, "axis {axis} mean {mean} vs 3se {}", 3.0 * se);
        }
    }

    #[test]
    fn identical_seed_identical_reset() {
        let env = super::super::DeskEnv::Point(PointMass::desk_default());
        let a = env.reset(7);
        let b = env.reset(7);
        assert_eq!(a.values, b.values);
    }
}
