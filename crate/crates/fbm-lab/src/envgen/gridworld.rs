//! An NxN gridworld with slip noise and exact tabular dynamics.

use super::{
    Action, ActionSpace, InitialDist, MarkovState, PomdpSpec, TaskReward,
};
use crate::error::{FbmError, Result};
use crate::oracle::FiniteMdp;
use crate::rng::Rng;

/// Moves are up/down/left/right. The intended move succeeds with probability
/// 1 - slip; otherwise one of the other three directions is taken uniformly.
/// Moves into a wall leave the agent in place.
#[derive(Clone, Debug)]
pub struct Gridworld {
    pub n: usize,
    pub slip: f64,
    pub episode_length: usize,
    pub discount: f64,
    pub initial: InitialDist,
    pub tasks: Vec<TaskReward>,
}

pub const GRID_ACTIONS: usize = 4;
const DELTAS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl Gridworld {
    pub fn new(
        n: usize,
        slip: f64,
        episode_length: usize,
        discount: f64,
        initial: InitialDist,
    ) -> Result<Self> {
        if n == 0 {
            return Err(FbmError::contract("gridworld size must be positive"));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(FbmError::contract(format!(
                "slip probability must lie in [0, 1], got {slip}"
            )));
        }
        let mut env = Gridworld {
            n,
            slip,
            episode_length,
            discount,
            initial,
            tasks: Vec::new(),
        };
        env.tasks = env.corner_goal_tasks();
        env.spec().validate()?;
        Ok(env)
    }

    /// 7x7 grid, slip 0.1, uniform starts.
    pub fn desk_default() -> Self {
        Gridworld::new(7, 0.1, 200, 0.98, InitialDist::Uniform).unwrap()
    }

    /// Goal tasks at the four corners (exact cell match).
    pub fn corner_goal_tasks(&self) -> Vec<TaskReward> {
        let m = (self.n - 1) as f64;
        vec![
            TaskReward::goal("goal_nw", vec![0.0, 0.0], 0.0),
            TaskReward::goal("goal_ne", vec![0.0, m], 0.0),
            TaskReward::goal("goal_sw", vec![m, 0.0], 0.0),
            TaskReward::goal("goal_se", vec![m, m], 0.0),
        ]
    }

    pub fn spec(&self) -> PomdpSpec {
        PomdpSpec {
            state_dim: 2,
            obs_dim: 2,
            action_space: ActionSpace::Discrete(GRID_ACTIONS),
            discount: self.discount,
            episode_length: self.episode_length,
            initial: self.initial,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n * self.n
    }

    pub fn state_index(&self, state: &MarkovState) -> usize {
        let row = state.values[0] as usize;
        let col = state.values[1] as usize;
        row * self.n + col
    }

    pub fn state_from_index(&self, index: usize) -> MarkovState {
        MarkovState::new(vec![(index / self.n) as f64, (index % self.n) as f64])
    }

    pub fn reset_with(&self, rng: &mut Rng) -> MarkovState {
        match self.initial {
            InitialDist::Fixed => MarkovState::new(vec![0.0, 0.0]),
            InitialDist::Uniform => self.state_from_index(rng.below(self.n_states())),
        }
    }

    fn move_from(&self, index: usize, dir: usize) -> usize {
        let (row, col) = ((index / self.n) as isize, (index % self.n) as isize);
        let (dr, dc) = DELTAS[dir];
        let (nr, nc) = (row + dr, col + dc);
        if nr < 0 || nc < 0 || nr >= self.n as isize || nc >= self.n as isize {
            index
        } else {
            (nr as usize) * self.n + nc as usize
        }
    }

    pub fn step(&self, state: &MarkovState, action: &Action, rng: &mut Rng) -> Result<MarkovState> {
        let Action::Discrete(a) = action else {
            return Err(FbmError::contract(
                "gridworld takes discrete actions".to_string(),
            ));
        };
        if *a >= GRID_ACTIONS {
            return Err(FbmError::contract(format!(
                "action {a} out of bounds for {GRID_ACTIONS} actions"
            )));
        }
        let index = self.state_index(state);
        let dir = if rng.bernoulli(self.slip) {
            // uniformly among the other three directions
            let mut others = [0usize; 3];
            let mut k = 0;
            for d in 0..GRID_ACTIONS {
                if d != *a {
                    others[k] = d;
                    k += 1;
                }
            }
            others[rng.below(3)]
        } else {
            *a
        };
        Ok(self.state_from_index(self.move_from(index, dir)))
    }

    /// The exact transition model. Row entries are constructed so every
    /// P[s, a, .] sums to exactly 1.0.
    pub fn to_finite_mdp(&self) -> FiniteMdp {
        let s = self.n_states();
        let mut p = vec![0.0; s * GRID_ACTIONS * s];
        let q = self.slip / 3.0;
        for from in 0..s {
            for a in 0..GRID_ACTIONS {
                let row = &mut p[(from * GRID_ACTIONS + a) * s..(from * GRID_ACTIONS + a + 1) * s];
                let mut mass_left = 1.0;
                let mut adds: Vec<(usize, f64)> = Vec::with_capacity(4);
                for d in 0..GRID_ACTIONS {
                    let dest = self.move_from(from, d);
                    let prob = if d == a { 1.0 - self.slip } else { q };
                    adds.push((dest, prob));
                }
                // assign the final share as the residual so the row is exact
                for (i, (dest, prob)) in adds.iter().enumerate() {
                    if i + 1 == adds.len() {
                        row[*dest] += mass_left;
                    } else {
                        row[*dest] += *prob;
                        mass_left -= *prob;
                    }
                }
            }
        }
        let mut mdp = FiniteMdp::new(s, GRID_ACTIONS, p, self.discount).expect("valid mdp");
        for task in &self.tasks {
            let rewards: Vec<f64> = (0..s)
                .map(|i| task.reward(&self.state_from_index(i)))
                .collect();
            mdp.add_reward(&task.task_id, rewards).expect("reward fits");
        }
        mdp
    }
}
