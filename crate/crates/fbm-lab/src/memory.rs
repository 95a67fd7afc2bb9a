//! Sequence encoders over trajectories of (action, observation) pairs.
//!
//! Three kinds: a GRU that folds the whole window (the memory model proper),
//! a frame-stack of the most recent pairs (the naive baseline), and the
//! degenerate last-observation encoder (memory-free). Windows are zero-padded
//! at the front; padded slots are processed as zeros by the GRU, matching the
//! training-time batching convention, and the first hidden state of a
//! sequence is always the zero vector.

use crate::autodiff::{BoundParams, Graph, GruCell, Mlp, OutputActivation, ParamSet, Tensor, Var};
use crate::envgen::MarkovState;
use crate::error::{FbmError, Result};
use crate::rng::Rng;

/// A length-L window of (action, observation) pairs ending at some time t.
/// Slot i pairs the action taken just before observation i arrived; the first
/// slot of an episode has a zero action. `valid` marks real slots, always a
/// contiguous suffix; padded slots are exactly zero.
#[derive(Clone, Debug)]
pub struct Trajectory {
    actions: Tensor,
    observations: Tensor,
    valid: Vec<bool>,
    terminal_state: Option<MarkovState>,
}

impl Trajectory {
    pub fn new(
        actions: Tensor,
        observations: Tensor,
        valid: Vec<bool>,
        terminal_state: Option<MarkovState>,
    ) -> Result<Self> {
        let len = valid.len();
        if actions.rows() != len || observations.rows() != len {
            return Err(FbmError::contract(format!(
                "trajectory length mismatch: {} actions, {} observations, {} mask entries",
                actions.rows(),
                observations.rows(),
                len
            )));
        }
        // valid slots must be a contiguous suffix
        let first_valid = valid.iter().position(|&v| v).unwrap_or(len);
        if valid[first_valid..].iter().any(|&v| !v) {
            return Err(FbmError::contract(
                "valid slots must form a contiguous suffix",
            ));
        }
        // padded slots must be exactly zero
        for i in 0..first_valid {
            if actions.row(i).iter().any(|&v| v != 0.0)
                || observations.row(i).iter().any(|&v| v != 0.0)
            {
                return Err(FbmError::contract(format!(
                    "padded slot {i} contains nonzero values"
                )));
            }
        }
        Ok(Trajectory {
            actions,
            observations,
            valid,
            terminal_state,
        })
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn actions(&self) -> &Tensor {
        &self.actions
    }

    pub fn observations(&self) -> &Tensor {
        &self.observations
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// The observation in the final slot.
    pub fn last_observation(&self) -> &[f64] {
        self.observations.row(self.len() - 1)
    }

    /// The true Markov state at the window's end. Oracle and labelling input
    /// only; never fed to agents unless privileged routing asks for it.
    pub fn terminal_state(&self) -> Option<&MarkovState> {
        self.terminal_state.as_ref()
    }
}

/// A batch of equally long trajectories, re-laid out per time step.
#[derive(Clone, Debug)]
pub struct TrajectoryBatch {
    pub batch: usize,
    pub len: usize,
    /// Per step: (N x action_dim, N x obs_dim).
    pub steps: Vec<(Tensor, Tensor)>,
    pub last_obs: Tensor,
    /// N x state_dim when every trajectory carries a terminal state.
    pub terminal_states: Option<Tensor>,
}

impl TrajectoryBatch {
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(FbmError::contract("empty trajectory batch"));
        }
        let len = trajectories[0].len();
        let act_dim = trajectories[0].actions.cols();
        let obs_dim = trajectories[0].observations.cols();
        if trajectories
            .iter()
            .any(|t| t.len() != len || t.actions.cols() != act_dim || t.observations.cols() != obs_dim)
        {
            return Err(FbmError::contract(
                "trajectories in a batch must share length and dims",
            ));
        }
        let n = trajectories.len();
        let mut steps = Vec::with_capacity(len);
        for t in 0..len {
            let mut a = Tensor::zeros(n, act_dim);
            let mut o = Tensor::zeros(n, obs_dim);
            for (i, tr) in trajectories.iter().enumerate() {
                a.row_mut(i).copy_from_slice(tr.actions.row(t));
                o.row_mut(i).copy_from_slice(tr.observations.row(t));
            }
            steps.push((a, o));
        }
        let last_obs = steps[len - 1].1.clone();
        let terminal_states = if trajectories.iter().all(|t| t.terminal_state.is_some()) {
            let sd = trajectories[0].terminal_state.as_ref().unwrap().values.len();
            let mut s = Tensor::zeros(n, sd);
            for (i, tr) in trajectories.iter().enumerate() {
                s.row_mut(i)
                    .copy_from_slice(&tr.terminal_state.as_ref().unwrap().values);
            }
            Some(s)
        } else {
            None
        };
        Ok(TrajectoryBatch {
            batch: n,
            len,
            steps,
            last_obs,
            terminal_states,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryKind {
    Gru,
    FrameStack(usize),
    LastObs,
}

impl MemoryKind {
    pub fn id(&self) -> String {
        match self {
            MemoryKind::Gru => "gru".to_string(),
            MemoryKind::FrameStack(k) => format!("frame_stack({k})"),
            MemoryKind::LastObs => "last_obs".to_string(),
        }
    }
}

/// A parameterized trajectory encoder.
#[derive(Clone, Debug)]
pub struct MemoryEncoder {
    pub kind: MemoryKind,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden_dim: usize,
    pub context_len: usize,
    embed: Option<Mlp>,
    cell: Option<GruCell>,
}

impl MemoryEncoder {
    /// Registers encoder parameters under `name` and returns the descriptor.
    /// Only the GRU kind owns parameters (a one-layer input preprocessor and
    /// the recurrent cell).
    pub fn init(
        ps: &mut ParamSet,
        name: &str,
        kind: MemoryKind,
        obs_dim: usize,
        act_dim: usize,
        embed_dim: usize,
        hidden_dim: usize,
        context_len: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if context_len == 0 {
            return Err(FbmError::contract("context length must be at least 1"));
        }
        let (embed, cell) = match kind {
            MemoryKind::Gru => {
                let embed = Mlp::init(
                    ps,
                    &format!("{name}.pre"),
                    obs_dim + act_dim,
                    &[],
                    embed_dim,
                    true,
                    OutputActivation::Tanh,
                    rng,
                )?;
                let cell = GruCell::init(ps, &format!("{name}.gru"), embed_dim, hidden_dim, rng)?;
                (Some(embed), Some(cell))
            }
            MemoryKind::FrameStack(k) => {
                if k == 0 {
                    return Err(FbmError::contract("frame stack depth must be positive"));
                }
                (None, None)
            }
            MemoryKind::LastObs => (None, None),
        };
        Ok(MemoryEncoder {
            kind,
            obs_dim,
            act_dim,
            hidden_dim,
            context_len,
            embed,
            cell,
        })
    }

    /// Width of the encoded context this encoder produces.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            MemoryKind::Gru => self.hidden_dim,
            MemoryKind::FrameStack(k) => k * (self.obs_dim + self.act_dim),
            MemoryKind::LastObs => self.obs_dim,
        }
    }

    /// Encodes per-step (action, observation) vars already in the graph.
    /// GRU folds every slot from a zero hidden state; padded zeros are
    /// processed like any other input.
    pub fn encode_steps(&self, g: &mut Graph, bp: &BoundParams, steps: &[(Var, Var)]) -> Var {
        assert!(!steps.is_empty(), "encode of an empty window");
        let batch = g.value(steps[0].0).rows();
        match self.kind {
            MemoryKind::LastObs => steps[steps.len() - 1].1,
            MemoryKind::FrameStack(k) => {
                let mut parts: Vec<Var> = Vec::with_capacity(2 * k);
                let have = steps.len();
                for i in 0..k {
                    if i < k.saturating_sub(have) {
                        let za = g.constant(Tensor::zeros(batch, self.act_dim));
                        let zo = g.constant(Tensor::zeros(batch, self.obs_dim));
                        parts.push(za);
                        parts.push(zo);
                    } else {
                        let (a, o) = steps[have - k + i];
                        parts.push(a);
                        parts.push(o);
                    }
                }
                g.concat_cols(&parts)
            }
            MemoryKind::Gru => {
                let embed = self.embed.as_ref().expect("gru has a preprocessor");
                let cell = self.cell.as_ref().expect("gru has a cell");
                let mut h = g.constant(Tensor::zeros(batch, self.hidden_dim));
                for &(a, o) in steps {
                    let x = g.concat_cols(&[a, o]);
                    let e = embed.forward(g, bp, x);
                    h = cell.forward(g, bp, h, e);
                }
                h
            }
        }
    }

    /// Encodes a whole batch, inserting its tensors as constants.
    pub fn encode(&self, g: &mut Graph, bp: &BoundParams, batch: &TrajectoryBatch) -> Var {
        let steps: Vec<(Var, Var)> = batch
            .steps
            .iter()
            .map(|(a, o)| (g.constant(a.clone()), g.constant(o.clone())))
            .collect();
        self.encode_steps(g, bp, &steps)
    }

    /// One streaming hidden-state update, used at evaluation time to condition
    /// on the entire episode history. Only meaningful for recurrent encoders.
    pub fn step_hidden(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        h: Var,
        action: Var,
        obs: Var,
    ) -> Result<Var> {
        if self.kind != MemoryKind::Gru {
            return Err(FbmError::contract(format!(
                "rollout hidden update requires a recurrent encoder, got {}",
                self.kind.id()
            )));
        }
        let embed = self.embed.as_ref().unwrap();
        let cell = self.cell.as_ref().unwrap();
        let x = g.concat_cols(&[action, obs]);
        let e = embed.forward(g, bp, x);
        Ok(cell.forward(g, bp, h, e))
    }

    pub fn zero_hidden(&self, batch: usize) -> Tensor {
        Tensor::zeros(batch, self.output_dim())
    }
}
