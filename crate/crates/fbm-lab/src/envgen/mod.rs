//! Desk-scale environments and partial-observability wrappers.
//!
//! Two environments: a discrete gridworld with slip noise and a continuous
//! point-mass with configurable mass and damping. Both expose their true
//! Markov state, evaluate a registered family of task rewards on every step,
//! and are observed through occlusion wrappers (additive noise, flickering,
//! hidden velocity). Environments are pure state machines: all mutation flows
//! through explicit (state, rng) arguments.

mod gridworld;
mod pointmass;

pub use gridworld::Gridworld;
pub use pointmass::PointMass;

use std::collections::BTreeMap;

use crate::error::{FbmError, Result};
use crate::rng::Rng;

/// Action spaces. Continuous actions are componentwise in [-1, 1].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous(usize),
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous(d) => *d,
        }
    }

    /// Encoding width when the action is fed to a network: one-hot for
    /// discrete spaces, raw components for continuous ones.
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Continuous(d) => *d,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    /// Network encoding: one-hot for discrete, components for continuous.
    pub fn encode(&self, space: &ActionSpace) -> Vec<f64> {
        match (self, space) {
            (Action::Discrete(a), ActionSpace::Discrete(n)) => {
                let mut v = vec![0.0; *n];
                v[*a] = 1.0;
                v
            }
            (Action::Continuous(v), ActionSpace::Continuous(_)) => v.clone(),
            _ => panic!("action does not match action space"),
        }
    }
}

/// How episodes start.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialDist {
    /// Gridworld: cell (0, 0). Point-mass: the origin at rest.
    Fixed,
    /// Gridworld: uniform over cells. Point-mass: position uniform in the
    /// inner box, zero velocity.
    Uniform,
}

impl InitialDist {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(InitialDist::Fixed),
            "uniform" => Ok(InitialDist::Uniform),
            other => Err(FbmError::Config(format!(
                "unknown initial distribution '{other}' (expected fixed|uniform)"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            InitialDist::Fixed => "fixed",
            InitialDist::Uniform => "uniform",
        }
    }
}

/// Static description of a partially observable environment.
#[derive(Clone, Debug)]
pub struct PomdpSpec {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub discount: f64,
    pub episode_length: usize,
    pub initial: InitialDist,
}

impl PomdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.obs_dim == 0 {
            return Err(FbmError::contract("state_dim and obs_dim must be positive"));
        }
        if self.episode_length == 0 {
            return Err(FbmError::contract("episode_length must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(FbmError::contract(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        Ok(())
    }
}

/// The true Markov state: a finite real vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovState {
    pub values: Vec<f64>,
}

impl MarkovState {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        MarkovState { values }
    }
}

/// What the agent sees. `dropped` is diagnostic only and never fed to agents.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
    pub dropped: bool,
}

/// Reward families. Rewards are functions of the Markov state only.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskKind {
    /// 1 when the leading state components are within `radius` of `target`.
    Goal { target: Vec<f64>, radius: f64 },
    /// clip(velocity . direction / v_max, 0, 1); point-mass only.
    DenseVelocity { direction: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskReward {
    pub task_id: String,
    pub kind: TaskKind,
}

impl TaskReward {
    pub fn goal(task_id: &str, target: Vec<f64>, radius: f64) -> Self {
        TaskReward {
            task_id: task_id.to_string(),
            kind: TaskKind::Goal { target, radius },
        }
    }

    pub fn dense_velocity(task_id: &str, direction: Vec<f64>) -> Self {
        TaskReward {
            task_id: task_id.to_string(),
            kind: TaskKind::DenseVelocity { direction },
        }
    }

    pub fn is_goal(&self) -> bool {
        matches!(self.kind, TaskKind::Goal { .. })
    }

    pub fn reward(&self, state: &MarkovState) -> f64 {
        match &self.kind {
            TaskKind::Goal { target, radius } => {
                let d2: f64 = target
                    .iter()
                    .zip(&state.values)
                    .map(|(t, s)| (t - s) * (t - s))
                    .sum();
                if d2.sqrt() <= radius + 1e-9 {
                    1.0
                } else {
                    0.0
                }
            }
            TaskKind::DenseVelocity { direction } => {
                let vel = &state.values[2..2 + direction.len()];
                let dot: f64 = vel.iter().zip(direction).map(|(v, d)| v * d).sum();
                (dot / pointmass::V_MAX).clamp(0.0, 1.0)
            }
        }
    }
}

/// Which model components receive raw observations; the rest are given the
/// true Markov state. Used by the failure-mode harness on desk environments,
/// where the true state is available as a privileged input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Routing {
    /// Everyone sees true states (the fully observed reference run).
    None,
    /// Everyone sees observations.
    All,
    /// Only the backward model sees observations (task misidentification).
    BackwardOnly,
    /// Only the forward model and policy see observations (state
    /// misidentification).
    ForwardPolicyOnly,
}

impl Routing {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Routing::None),
            "all" => Ok(Routing::All),
            "backward_only" => Ok(Routing::BackwardOnly),
            "forward_policy_only" => Ok(Routing::ForwardPolicyOnly),
            other => Err(FbmError::Config(format!(
                "unknown routing '{other}' (expected none|all|backward_only|forward_policy_only)"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Routing::None => "none",
            Routing::All => "all",
            Routing::BackwardOnly => "backward_only",
            Routing::ForwardPolicyOnly => "forward_policy_only",
        }
    }
}

/// Observation corruption modes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OcclusionMode {
    None,
    /// Adds isotropic zero-mean Gaussian noise with the given standard
    /// deviation to every component.
    Noisy { sigma: f64 },
    /// Zeroes the whole observation with the given probability.
    Flickering { p: f64 },
    /// Point-mass: only the position components are observed.
    HiddenVelocity,
}

impl OcclusionMode {
    pub fn id(&self) -> &'static str {
        match self {
            OcclusionMode::None => "none",
            OcclusionMode::Noisy { .. } => "noisy",
            OcclusionMode::Flickering { .. } => "flickering",
            OcclusionMode::HiddenVelocity => "hidden_velocity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcclusionConfig {
    pub mode: OcclusionMode,
    pub routing: Routing,
}

impl OcclusionConfig {
    pub fn new(mode: OcclusionMode, routing: Routing) -> Result<Self> {
        match mode {
            OcclusionMode::Noisy { sigma } if sigma < 0.0 => {
                return Err(FbmError::contract(format!(
                    "noise sigma must be non-negative, got {sigma}"
                )));
            }
            OcclusionMode::Flickering { p } if !(0.0..=1.0).contains(&p) => {
                return Err(FbmError::contract(format!(
                    "flicker probability must lie in [0, 1], got {p}"
                )));
            }
            _ => {}
        }
        Ok(OcclusionConfig { mode, routing })
    }

    pub fn fully_observed() -> Self {
        OcclusionConfig {
            mode: OcclusionMode::None,
            routing: Routing::None,
        }
    }

    /// Observation width produced by this occlusion mode.
    pub fn obs_dim(&self, state_dim: usize) -> usize {
        match self.mode {
            OcclusionMode::HiddenVelocity => 2,
            _ => state_dim,
        }
    }
}

/// Applies the occlusion wrapper to a true state.
pub fn observe(state: &MarkovState, occl: &OcclusionConfig, rng: &mut Rng) -> Observation {
    match occl.mode {
        OcclusionMode::None => Observation {
            values: state.values.clone(),
            dropped: false,
        },
        OcclusionMode::Noisy { sigma } => Observation {
            values: state.values.iter().map(|v| v + rng.normal() * sigma).collect(),
            dropped: false,
        },
        OcclusionMode::Flickering { p } => {
            if rng.bernoulli(p) {
                Observation {
                    values: vec![0.0; state.values.len()],
                    dropped: true,
                }
            } else {
                Observation {
                    values: state.values.clone(),
                    dropped: false,
                }
            }
        }
        OcclusionMode::HiddenVelocity => Observation {
            values: state.values[..2].to_vec(),
            dropped: false,
        },
    }
}

/// Mass and damping multipliers applied at step time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicsConfig {
    pub mass_scale: f64,
    pub damping_scale: f64,
}

impl DynamicsConfig {
    pub fn new(mass_scale: f64, damping_scale: f64) -> Result<Self> {
        if mass_scale <= 0.0 || damping_scale <= 0.0 {
            return Err(FbmError::contract(format!(
                "dynamics scales must be strictly positive, got mass {mass_scale}, damping {damping_scale}"
            )));
        }
        Ok(DynamicsConfig {
            mass_scale,
            damping_scale,
        })
    }

    pub fn base() -> Self {
        DynamicsConfig {
            mass_scale: 1.0,
            damping_scale: 1.0,
        }
    }

    /// Both coefficients scaled by the same factor.
    pub fn scaled(factor: f64) -> Result<Self> {
        DynamicsConfig::new(factor, factor)
    }
}

/// Train/test environment instances for the dynamics-generalisation harness.
#[derive(Clone, Debug)]
pub struct DynamicsSplit {
    pub train: Vec<DynamicsConfig>,
    pub test: Vec<DynamicsConfig>,
}

/// Enumerates (train, test) environment instances with both mass and damping
/// scaled by each factor.
pub fn make_dynamics_split(train_scales: &[f64], test_scales: &[f64]) -> Result<DynamicsSplit> {
    if train_scales.is_empty() || test_scales.is_empty() {
        return Err(FbmError::contract(
            "dynamics split needs non-empty train and test scale sets",
        ));
    }
    let train = train_scales
        .iter()
        .map(|&s| DynamicsConfig::scaled(s))
        .collect::<Result<Vec<_>>>()?;
    let test = test_scales
        .iter()
        .map(|&s| DynamicsConfig::scaled(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(DynamicsSplit { train, test })
}

/// The two desk environments behind one dispatch type.
#[derive(Clone, Debug)]
pub enum DeskEnv {
    Grid(Gridworld),
    Point(PointMass),
}

impl DeskEnv {
    pub fn id(&self) -> &'static str {
        match self {
            DeskEnv::Grid(_) => "gridworld",
            DeskEnv::Point(_) => "pointmass",
        }
    }

    pub fn spec(&self) -> PomdpSpec {
        match self {
            DeskEnv::Grid(e) => e.spec(),
            DeskEnv::Point(e) => e.spec(),
        }
    }

    pub fn tasks(&self) -> &[TaskReward] {
        match self {
            DeskEnv::Grid(e) => &e.tasks,
            DeskEnv::Point(e) => &e.tasks,
        }
    }

    /// Draws an initial state. Identical seeds give identical states.
    pub fn reset(&self, seed: u64) -> MarkovState {
        let mut rng = Rng::stream(seed, "reset");
        self.reset_with(&mut rng)
    }

    pub fn reset_with(&self, rng: &mut Rng) -> MarkovState {
        match self {
            DeskEnv::Grid(e) => e.reset_with(rng),
            DeskEnv::Point(e) => e.reset_with(rng),
        }
    }

    /// One transition. Returns the next state, every registered task's reward
    /// at the next state, and an intrinsic-termination flag (always false for
    /// the desk environments; horizons and goal termination are applied by
    /// rollout drivers).
    pub fn step(
        &self,
        state: &MarkovState,
        action: &Action,
        dynamics: &DynamicsConfig,
        rng: &mut Rng,
    ) -> Result<(MarkovState, BTreeMap<String, f64>, bool)> {
        let next = match self {
            DeskEnv::Grid(e) => e.step(state, action, rng)?,
            DeskEnv::Point(e) => e.step(state, action, dynamics)?,
        };
        let rewards = self
            .tasks()
            .iter()
            .map(|t| (t.task_id.clone(), t.reward(&next)))
            .collect();
        Ok((next, rewards, false))
    }

    /// A stable fingerprint of the environment configuration, stored in
    /// dataset metadata.
    pub fn spec_hash(&self) -> String {
        let desc = match self {
            DeskEnv::Grid(e) => format!(
                "gridworld n={} slip={} len={} gamma={} init={}",
                e.n,
                e.slip,
                e.episode_length,
                e.discount,
                e.initial.id()
            ),
            DeskEnv::Point(e) => format!(
                "pointmass len={} gamma={} init={}",
                e.episode_length,
                e.discount,
                e.initial.id()
            ),
        };
        format!("{:016x}", crate::rng::fnv1a64(desc.as_bytes()))
    }
}
