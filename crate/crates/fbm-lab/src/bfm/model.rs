//! Neural FB / FB-M / FB-stack / USF-M models for the continuous and
//! discrete desk environments: architecture wiring, losses, task inference,
//! and streaming rollout policies.

use serde_json::json;

use crate::autodiff::{
    checkpoint, BoundParams, Graph, Mlp, OutputActivation, ParamSet, Tensor, Var,
};
use crate::data::{LabelledSample, SliceBatch};
use crate::envgen::{Action, ActionSpace, Routing};
use crate::error::{FbmError, Result};
use crate::memory::{MemoryEncoder, MemoryKind, Trajectory, TrajectoryBatch};
use crate::oracle::solve_dense;
use crate::rng::Rng;

use super::LatentTask;

/// Which model family member to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Memory-free FB: last-observation encoders everywhere.
    Fb,
    /// FB with GRU trajectory encoders.
    FbM,
    /// FB with a stack of the 4 most recent observation-action pairs.
    FbStack,
    /// Universal successor features with GRU encoders.
    UsfM,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fb" => Ok(Variant::Fb),
            "fb_m" => Ok(Variant::FbM),
            "fb_stack" => Ok(Variant::FbStack),
            "usf_m" => Ok(Variant::UsfM),
            other => Err(FbmError::Config(format!(
                "unknown variant '{other}' (expected fb|fb_m|fb_stack|usf_m)"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Variant::Fb => "fb",
            Variant::FbM => "fb_m",
            Variant::FbStack => "fb_stack",
            Variant::UsfM => "usf_m",
        }
    }

    fn encoder_kind(&self) -> MemoryKind {
        match self {
            Variant::Fb => MemoryKind::LastObs,
            Variant::FbM | Variant::UsfM => MemoryKind::Gru,
            Variant::FbStack => MemoryKind::FrameStack(4),
        }
    }
}

/// Architecture and latent-space settings shared by the model family.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub variant: Variant,
    pub routing: Routing,
    pub d: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub gamma: f64,
    pub f_hidden: Vec<usize>,
    pub b_hidden: Vec<usize>,
    pub pi_hidden: Vec<usize>,
    pub preproc_dim: usize,
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub l_forward: usize,
    pub l_backward: usize,
    pub lambda_orth: f64,
    /// Rescale inferred task embeddings to the sqrt(d) sphere before handing
    /// them to the policy, matching the scale of training-time z draws. Off
    /// by default; the comparison harnesses switch it on so policies stay on
    /// the embedding distribution they were trained with.
    pub normalize_inferred_z: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: d=16, F (128,128), B (64,64), one-layer
    /// preprocessors of width 64, GRU hidden 64, context length 8.
    pub fn desk(
        variant: Variant,
        routing: Routing,
        obs_dim: usize,
        state_dim: usize,
        action_space: ActionSpace,
        gamma: f64,
        seed: u64,
    ) -> Self {
        ModelConfig {
            variant,
            routing,
            d: 16,
            obs_dim,
            state_dim,
            action_space,
            gamma,
            f_hidden: vec![128, 128],
            b_hidden: vec![64, 64],
            pi_hidden: vec![128, 128],
            preproc_dim: 64,
            embed_dim: 64,
            gru_hidden: 64,
            l_forward: 8,
            l_backward: 8,
            lambda_orth: 1.0,
            normalize_inferred_z: false,
            seed,
        }
    }

    /// Full-size hyperparameters: d=50, F (1024,1024), B (512,512),
    /// preprocessors (512), GRU hidden 512, context length 32.
    pub fn paper_scale(mut self) -> Self {
        self.d = 50;
        self.f_hidden = vec![1024, 1024];
        self.b_hidden = vec![512, 512];
        self.pi_hidden = vec![1024, 1024];
        self.preproc_dim = 512;
        self.embed_dim = 512;
        self.gru_hidden = 512;
        self.l_forward = 32;
        self.l_backward = 32;
        self
    }

    pub fn act_enc_dim(&self) -> usize {
        self.action_space.encoded_dim()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "variant": self.variant.id(),
            "routing": self.routing.id(),
            "d": self.d,
            "obs_dim": self.obs_dim,
            "state_dim": self.state_dim,
            "action_space": match &self.action_space {
                ActionSpace::Discrete(n) => format!("discrete:{n}"),
                ActionSpace::Continuous(n) => format!("continuous:{n}"),
            },
            "gamma": self.gamma,
            "f_hidden": self.f_hidden,
            "b_hidden": self.b_hidden,
            "pi_hidden": self.pi_hidden,
            "preproc_dim": self.preproc_dim,
            "embed_dim": self.embed_dim,
            "gru_hidden": self.gru_hidden,
            "l_forward": self.l_forward,
            "l_backward": self.l_backward,
            "lambda_orth": self.lambda_orth,
            "normalize_inferred_z": self.normalize_inferred_z,
            "seed": self.seed,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let get_usize = |k: &str| -> Result<usize> {
            v[k].as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| FbmError::Format(format!("missing field '{k}'")))
        };
        let get_f64 = |k: &str| -> Result<f64> {
            v[k].as_f64()
                .ok_or_else(|| FbmError::Format(format!("missing field '{k}'")))
        };
        let get_vec = |k: &str| -> Result<Vec<usize>> {
            v[k].as_array()
                .map(|a| a.iter().filter_map(|x| x.as_u64()).map(|x| x as usize).collect())
                .ok_or_else(|| FbmError::Format(format!("missing field '{k}'")))
        };
        let action_space = {
            let s = v["action_space"]
                .as_str()
                .ok_or_else(|| FbmError::Format("missing action_space".into()))?;
            let (kind, n) = s
                .split_once(':')
                .ok_or_else(|| FbmError::Format("malformed action_space".into()))?;
            let n: usize = n
                .parse()
                .map_err(|_| FbmError::Format("malformed action_space".into()))?;
            match kind {
                "discrete" => ActionSpace::Discrete(n),
                "continuous" => ActionSpace::Continuous(n),
                _ => return Err(FbmError::Format("malformed action_space".into())),
            }
        };
        Ok(ModelConfig {
            variant: Variant::parse(
                v["variant"]
                    .as_str()
                    .ok_or_else(|| FbmError::Format("missing variant".into()))?,
            )?,
            routing: Routing::parse(
                v["routing"]
                    .as_str()
                    .ok_or_else(|| FbmError::Format("missing routing".into()))?,
            )?,
            d: get_usize("d")?,
            obs_dim: get_usize("obs_dim")?,
            state_dim: get_usize("state_dim")?,
            action_space,
            gamma: get_f64("gamma")?,
            f_hidden: get_vec("f_hidden")?,
            b_hidden: get_vec("b_hidden")?,
            pi_hidden: get_vec("pi_hidden")?,
            preproc_dim: get_usize("preproc_dim")?,
            embed_dim: get_usize("embed_dim")?,
            gru_hidden: get_usize("gru_hidden")?,
            l_forward: get_usize("l_forward")?,
            l_backward: get_usize("l_backward")?,
            lambda_orth: get_f64("lambda_orth")?,
            normalize_inferred_z: v["normalize_inferred_z"].as_bool().unwrap_or(false),
            seed: v["seed"]
                .as_u64()
                .ok_or_else(|| FbmError::Format("missing seed".into()))?,
        })
    }
}

/// The three consumers of encoded context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Consumer {
    Forward,
    Backward,
    Policy,
}

/// What a consumer is wired to: which encoder kind and whether its input
/// stream is raw observations or privileged true states. A consumer routed to
/// true states is always memory-free (the state already is Markov).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wiring {
    pub kind: MemoryKind,
    pub use_state: bool,
}

pub fn wiring_for(variant: Variant, routing: Routing, consumer: Consumer) -> Wiring {
    let sees_obs = match routing {
        Routing::None => false,
        Routing::All => true,
        Routing::BackwardOnly => consumer == Consumer::Backward,
        Routing::ForwardPolicyOnly => consumer != Consumer::Backward,
    };
    if sees_obs {
        Wiring {
            kind: variant.encoder_kind(),
            use_state: false,
        }
    } else {
        Wiring {
            kind: MemoryKind::LastObs,
            use_state: true,
        }
    }
}

const INFER_CHUNK: usize = 256;

fn build_encoder(
    ps: &mut ParamSet,
    name: &str,
    cfg: &ModelConfig,
    wiring: Wiring,
    context_len: usize,
    rng: &mut Rng,
) -> Result<MemoryEncoder> {
    let input_dim = if wiring.use_state {
        cfg.state_dim
    } else {
        cfg.obs_dim
    };
    MemoryEncoder::init(
        ps,
        name,
        wiring.kind,
        input_dim,
        cfg.act_enc_dim(),
        cfg.embed_dim,
        cfg.gru_hidden,
        context_len,
        rng,
    )
}

/// Encoded context plus the consumer's current input vector (the last
/// observation, or the true state under privileged routing).
fn consumer_context(
    g: &mut Graph,
    bp: &BoundParams,
    enc: &MemoryEncoder,
    wiring: Wiring,
    batch: &TrajectoryBatch,
) -> Result<(Var, Var)> {
    if wiring.use_state {
        let states = batch.terminal_states.as_ref().ok_or_else(|| {
            FbmError::contract("privileged routing needs terminal states in the batch")
        })?;
        let cur = g.constant(states.clone());
        Ok((cur, cur))
    } else {
        let context = enc.encode(g, bp, batch);
        let cur = g.constant(batch.last_obs.clone());
        Ok((context, cur))
    }
}

/// Streaming per-consumer context for episode rollouts.
enum StreamState {
    Last(Vec<f64>),
    Stack {
        k: usize,
        frames: std::collections::VecDeque<(Vec<f64>, Vec<f64>)>,
    },
    Gru(Tensor),
}

struct ConsumerStream {
    wiring: Wiring,
    state: StreamState,
}

impl ConsumerStream {
    fn new(enc: &MemoryEncoder, wiring: Wiring) -> Self {
        let state = match wiring.kind {
            MemoryKind::LastObs => StreamState::Last(vec![0.0; enc.obs_dim]),
            MemoryKind::FrameStack(k) => StreamState::Stack {
                k,
                frames: std::collections::VecDeque::new(),
            },
            MemoryKind::Gru => StreamState::Gru(Tensor::zeros(1, enc.hidden_dim)),
        };
        ConsumerStream { wiring, state }
    }

    /// Pushes the newest (previous action, current input) pair.
    fn update(
        &mut self,
        params: &ParamSet,
        enc: &MemoryEncoder,
        prev_action: &[f64],
        input: &[f64],
    ) {
        match &mut self.state {
            StreamState::Last(v) => *v = input.to_vec(),
            StreamState::Stack { k, frames } => {
                frames.push_back((prev_action.to_vec(), input.to_vec()));
                while frames.len() > *k {
                    frames.pop_front();
                }
            }
            StreamState::Gru(h) => {
                let mut g = Graph::new();
                let bp = params.bind_frozen(&mut g);
                let hv = g.constant(h.clone());
                let av = g.constant(Tensor::row_vector(prev_action.to_vec()));
                let ov = g.constant(Tensor::row_vector(input.to_vec()));
                let next = enc
                    .step_hidden(&mut g, &bp, hv, av, ov)
                    .expect("gru stream update");
                *h = g.value(next).clone();
            }
        }
    }

    /// The current encoded context as a 1 x output_dim row.
    fn context(&self, enc: &MemoryEncoder) -> Tensor {
        match &self.state {
            StreamState::Last(v) => Tensor::row_vector(v.clone()),
            StreamState::Stack { k, frames } => {
                let width = enc.act_dim + enc.obs_dim;
                let mut row = vec![0.0; k * width];
                let offset = k - frames.len();
                for (i, (a, o)) in frames.iter().enumerate() {
                    let at = (offset + i) * width;
                    row[at..at + enc.act_dim].copy_from_slice(a);
                    row[at + enc.act_dim..at + width].copy_from_slice(o);
                }
                Tensor::row_vector(row)
            }
            StreamState::Gru(h) => h.clone(),
        }
    }

    fn current_input<'a>(&self, obs: &'a [f64], state: &'a [f64]) -> &'a [f64] {
        if self.wiring.use_state {
            state
        } else {
            obs
        }
    }
}

/// Forward-backward model: forward map F, backward map B, policy pi, one
/// memory encoder per consumer, and frozen target copies of the F and B
/// towers.
pub struct FbModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    pub targets: ParamSet,
    enc_f: MemoryEncoder,
    enc_b: MemoryEncoder,
    enc_pi: MemoryEncoder,
    pre_oa: Mlp,
    pre_oz: Mlp,
    f_net: Mlp,
    b_net: Mlp,
    pre_pi_oz: Option<Mlp>,
    pi_net: Option<Mlp>,
}

/// Parameter-name prefixes of the towers that keep Polyak-averaged targets.
pub const FB_TARGET_PREFIXES: [&str; 2] = ["f.", "b."];

impl FbModel {
    pub fn init(cfg: ModelConfig) -> Result<FbModel> {
        if cfg.d == 0 {
            return Err(FbmError::contract("latent dimension must be positive"));
        }
        let mut ps = ParamSet::new();
        let mut rng = Rng::stream(cfg.seed, "model_init");

        let w_f = wiring_for(cfg.variant, cfg.routing, Consumer::Forward);
        let w_b = wiring_for(cfg.variant, cfg.routing, Consumer::Backward);
        let w_pi = wiring_for(cfg.variant, cfg.routing, Consumer::Policy);

        let enc_f = build_encoder(&mut ps, "f.enc", &cfg, w_f, cfg.l_forward, &mut rng)?;
        let enc_b = build_encoder(&mut ps, "b.enc", &cfg, w_b, cfg.l_backward, &mut rng)?;
        let enc_pi = build_encoder(&mut ps, "pi.enc", &cfg, w_pi, cfg.l_forward, &mut rng)?;

        let f_cur = if w_f.use_state { cfg.state_dim } else { cfg.obs_dim };
        let pi_cur = if w_pi.use_state { cfg.state_dim } else { cfg.obs_dim };

        let pre_oa = Mlp::init(
            &mut ps,
            "f.pre_oa",
            f_cur + cfg.act_enc_dim(),
            &[],
            cfg.preproc_dim,
            true,
            OutputActivation::Tanh,
            &mut rng,
        )?;
        let pre_oz = Mlp::init(
            &mut ps,
            "f.pre_oz",
            f_cur + cfg.d,
            &[],
            cfg.preproc_dim,
            true,
            OutputActivation::Tanh,
            &mut rng,
        )?;
        let f_net = Mlp::init(
            &mut ps,
            "f.net",
            enc_f.output_dim() + 2 * cfg.preproc_dim,
            &cfg.f_hidden,
            cfg.d,
            true,
            OutputActivation::Linear,
            &mut rng,
        )?;
        let b_net = Mlp::init(
            &mut ps,
            "b.net",
            enc_b.output_dim(),
            &cfg.b_hidden,
            cfg.d,
            true,
            OutputActivation::Linear,
            &mut rng,
        )?;
        let (pre_pi_oz, pi_net) = match cfg.action_space {
            ActionSpace::Continuous(act_dim) => {
                let pre = Mlp::init(
                    &mut ps,
                    "pi.pre_oz",
                    pi_cur + cfg.d,
                    &[],
                    cfg.preproc_dim,
                    true,
                    OutputActivation::Tanh,
                    &mut rng,
                )?;
                let net = Mlp::init(
                    &mut ps,
                    "pi.net",
                    enc_pi.output_dim() + cfg.preproc_dim,
                    &cfg.pi_hidden,
                    act_dim,
                    true,
                    OutputActivation::Tanh,
                    &mut rng,
                )?;
                (Some(pre), Some(net))
            }
            // discrete policies are exact argmax over the critic
            ActionSpace::Discrete(_) => (None, None),
        };

        let targets = ps.clone_subset_frozen(&FB_TARGET_PREFIXES);
        Ok(FbModel {
            cfg,
            params: ps,
            targets,
            enc_f,
            enc_b,
            enc_pi,
            pre_oa,
            pre_oz,
            f_net,
            b_net,
            pre_pi_oz,
            pi_net,
        })
    }

    pub fn wiring(&self, consumer: Consumer) -> Wiring {
        wiring_for(self.cfg.variant, self.cfg.routing, consumer)
    }

    /// Encoded context and current input for one consumer over a batch.
    pub fn context(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        consumer: Consumer,
        batch: &TrajectoryBatch,
    ) -> Result<(Var, Var)> {
        let (enc, wiring) = match consumer {
            Consumer::Forward => (&self.enc_f, self.wiring(Consumer::Forward)),
            Consumer::Backward => (&self.enc_b, self.wiring(Consumer::Backward)),
            Consumer::Policy => (&self.enc_pi, self.wiring(Consumer::Policy)),
        };
        consumer_context(g, bp, enc, wiring, batch)
    }

    /// F(context, o, a, z): N x d forward embeddings.
    pub fn f_forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        context: Var,
        cur: Var,
        action: Var,
        z: Var,
    ) -> Var {
        let oa_in = g.concat_cols(&[cur, action]);
        let oa = self.pre_oa.forward(g, bp, oa_in);
        let oz_in = g.concat_cols(&[cur, z]);
        let oz = self.pre_oz.forward(g, bp, oz_in);
        let f_in = g.concat_cols(&[context, oa, oz]);
        self.f_net.forward(g, bp, f_in)
    }

    /// B(context): N x d backward embeddings, L2-normalized to radius sqrt(d).
    pub fn b_forward(&self, g: &mut Graph, bp: &BoundParams, context: Var) -> Var {
        let raw = self.b_net.forward(g, bp, context);
        g.row_l2_normalize(raw, (self.cfg.d as f64).sqrt())
    }

    /// pi(context, o, z): N x action_dim, componentwise in [-1, 1].
    pub fn pi_forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        context: Var,
        cur: Var,
        z: Var,
    ) -> Var {
        let pre = self.pre_pi_oz.as_ref().expect("continuous policy");
        let net = self.pi_net.as_ref().expect("continuous policy");
        let oz_in = g.concat_cols(&[cur, z]);
        let oz = pre.forward(g, bp, oz_in);
        let pi_in = g.concat_cols(&[context, oz]);
        net.forward(g, bp, pi_in)
    }

    /// Q(tau, a, z) = F(...)^T z, one value per batch row.
    pub fn q_values(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        batch: &TrajectoryBatch,
        actions: &Tensor,
        z: &Tensor,
    ) -> Result<Var> {
        let (ctx, cur) = self.context(g, bp, Consumer::Forward, batch)?;
        let a = g.constant(actions.clone());
        let zv = g.constant(z.clone());
        let f = self.f_forward(g, bp, ctx, cur, a, zv);
        Ok(g.row_dot(f, zv))
    }

    /// The FB TD loss:
    ///   mean_{i,j} (F_i^T Bbar_j - gamma Fbar'_i^T Bbar_j)^2
    ///   - 2 mean_i F_i^T B(next_i)
    ///   + lambda * || mean_j B_j B_j^T - I ||_F^2
    /// with targets on the quadratic term, the online backward model on the
    /// alignment term and the covariance regularizer, and the next action
    /// drawn from the online policy (smoothed when noise is configured).
    #[allow(clippy::too_many_arguments)]
    pub fn fb_td_loss(
        &self,
        g: &mut Graph,
        online: &BoundParams,
        target: &BoundParams,
        slice: &SliceBatch,
        z: &Tensor,
        smoothing: Option<(f64, f64)>,
        rng: &mut Rng,
    ) -> Result<Var> {
        let n = slice.tau_t.len();
        if n < 2 {
            return Err(FbmError::contract(
                "FB loss needs a batch of at least 2 (covariance undefined)",
            ));
        }
        let bt_t = TrajectoryBatch::from_trajectories(&slice.tau_t)?;
        let bt_next = TrajectoryBatch::from_trajectories(&slice.tau_next)?;
        let bt_next_b = TrajectoryBatch::from_trajectories(&slice.tau_next_b)?;
        let bt_future = TrajectoryBatch::from_trajectories(&slice.tau_future)?;

        let zv = g.constant(z.clone());
        let actions = g.constant(slice.actions.clone());

        // online F at the anchors
        let (ctx_f, cur_f) = self.context(g, online, Consumer::Forward, &bt_t)?;
        let f_t = self.f_forward(g, online, ctx_f, cur_f, actions, zv);

        // target B over independent future windows
        let (ctx_bt, _) = self.context(g, target, Consumer::Backward, &bt_future)?;
        let b_bar = self.b_forward(g, target, ctx_bt);
        let b_bar_t = g.transpose(b_bar);
        let m_online = g.matmul(f_t, b_bar_t);

        // target side: Fbar at successor windows with the online policy's action
        let next_action = self.next_actions(g, online, target, &bt_next, z, smoothing, rng)?;
        let (ctx_fbar, cur_fbar) = self.context(g, target, Consumer::Forward, &bt_next)?;
        let na = g.constant(next_action);
        let f_bar_next = self.f_forward(g, target, ctx_fbar, cur_fbar, na, zv);
        let m_target_raw = g.matmul(f_bar_next, b_bar_t);
        let m_target = g.scale(m_target_raw, self.cfg.gamma);

        let diff = g.sub(m_online, m_target);
        let sq = g.square(diff);
        let quadratic = g.mean_all(sq);

        // alignment term with the online backward model at the true successors
        let (ctx_b, _) = self.context(g, online, Consumer::Backward, &bt_next_b)?;
        let b_next = self.b_forward(g, online, ctx_b);
        let diag = g.row_dot(f_t, b_next);
        let diag_mean = g.mean_all(diag);
        let align = g.scale(diag_mean, -2.0);

        // covariance regularizer toward the identity
        let (ctx_bf, _) = self.context(g, online, Consumer::Backward, &bt_future)?;
        let b_fut = self.b_forward(g, online, ctx_bf);
        let b_fut_t = g.transpose(b_fut);
        let cov_raw = g.matmul(b_fut_t, b_fut);
        let cov = g.scale(cov_raw, 1.0 / n as f64);
        let eye = g.constant(Tensor::identity(self.cfg.d));
        let cov_err = g.sub(cov, eye);
        let cov_sq = g.square(cov_err);
        let cov_sum = g.sum_all(cov_sq);
        let reg = g.scale(cov_sum, self.cfg.lambda_orth);

        let partial = g.add(quadratic, align);
        Ok(g.add(partial, reg))
    }

    /// Next actions for the TD target: the online policy at the successor
    /// windows for continuous spaces (optionally smoothed with truncated
    /// Gaussian noise), or the greedy action of the target critic for
    /// discrete spaces.
    fn next_actions(
        &self,
        g: &mut Graph,
        online: &BoundParams,
        target: &BoundParams,
        bt_next: &TrajectoryBatch,
        z: &Tensor,
        smoothing: Option<(f64, f64)>,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        match self.cfg.action_space {
            ActionSpace::Continuous(_) => {
                let zv = g.constant(z.clone());
                let (ctx_pi, cur_pi) = self.context(g, online, Consumer::Policy, bt_next)?;
                let a = self.pi_forward(g, online, ctx_pi, cur_pi, zv);
                let mut av = g.value(a).clone();
                if let Some((sigma, clip)) = smoothing {
                    av = crate::trainer::smoothed_action(&av, rng, sigma, clip);
                }
                Ok(av)
            }
            ActionSpace::Discrete(n_actions) => {
                // greedy over the target critic
                let n = bt_next.batch;
                let zv = g.constant(z.clone());
                let (ctx, cur) = self.context(g, target, Consumer::Forward, bt_next)?;
                let mut best_q = vec![f64::NEG_INFINITY; n];
                let mut best_a = vec![0usize; n];
                for a in 0..n_actions {
                    let mut onehot = Tensor::zeros(n, n_actions);
                    for r in 0..n {
                        onehot.set(r, a, 1.0);
                    }
                    let av = g.constant(onehot);
                    let f = self.f_forward(g, target, ctx, cur, av, zv);
                    let q = g.row_dot(f, zv);
                    for r in 0..n {
                        let v = g.value(q).get(r, 0);
                        if v > best_q[r] {
                            best_q[r] = v;
                            best_a[r] = a;
                        }
                    }
                }
                let mut onehot = Tensor::zeros(n, n_actions);
                for (r, &a) in best_a.iter().enumerate() {
                    onehot.set(r, a, 1.0);
                }
                Ok(onehot)
            }
        }
    }

    /// Actor loss: -mean F(tau, pi(tau, z), z)^T z. Gradients flow only into
    /// the policy tower; bind the F tower non-trainable for this pass.
    pub fn policy_loss(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        tau: &[Trajectory],
        z: &Tensor,
    ) -> Result<Var> {
        if !matches!(self.cfg.action_space, ActionSpace::Continuous(_)) {
            return Err(FbmError::contract(
                "policy loss applies to continuous action spaces only; discrete policies are exact argmax",
            ));
        }
        let bt = TrajectoryBatch::from_trajectories(tau)?;
        let zv = g.constant(z.clone());
        let (ctx_pi, cur_pi) = self.context(g, bp, Consumer::Policy, &bt)?;
        let a = self.pi_forward(g, bp, ctx_pi, cur_pi, zv);
        let (ctx_f, cur_f) = self.context(g, bp, Consumer::Forward, &bt)?;
        let f = self.f_forward(g, bp, ctx_f, cur_f, a, zv);
        let q = g.row_dot(f, zv);
        let mq = g.mean_all(q);
        Ok(g.neg(mq))
    }

    /// B(enc(tau)) for a set of trajectories, evaluated without gradients.
    pub fn backward_outputs(&self, trajectories: &[Trajectory]) -> Result<Tensor> {
        if trajectories.is_empty() {
            return Err(FbmError::contract("no trajectories to encode"));
        }
        let mut out = Tensor::zeros(trajectories.len(), self.cfg.d);
        let mut row = 0;
        for chunk in trajectories.chunks(INFER_CHUNK) {
            let bt = TrajectoryBatch::from_trajectories(chunk)?;
            let mut g = Graph::new();
            let bp = self.params.bind_frozen(&mut g);
            let (ctx, _) = self.context(&mut g, &bp, Consumer::Backward, &bt)?;
            let b = self.b_forward(&mut g, &bp, ctx);
            let bv = g.value(b);
            for r in 0..chunk.len() {
                out.row_mut(row).copy_from_slice(bv.row(r));
                row += 1;
            }
        }
        Ok(out)
    }

    /// Task inference: z = (1/k) sum_i reward_i * B(enc(tau_i)), used as-is
    /// (no re-normalization).
    pub fn infer_task(&self, labelled: &[LabelledSample]) -> Result<LatentTask> {
        if labelled.is_empty() {
            return Err(FbmError::contract("task inference needs labelled samples"));
        }
        let trajectories: Vec<Trajectory> =
            labelled.iter().map(|s| s.trajectory.clone()).collect();
        let b = self.backward_outputs(&trajectories)?;
        let k = labelled.len() as f64;
        let mut z = vec![0.0; self.cfg.d];
        for (i, sample) in labelled.iter().enumerate() {
            for (acc, v) in z.iter_mut().zip(b.row(i)) {
                *acc += sample.reward * v / k;
            }
        }
        if self.cfg.normalize_inferred_z {
            rescale_to_sphere(&mut z);
        }
        LatentTask::new(z, super::ZSource::Inferred)
    }

    /// A streaming rollout policy conditioned on one task embedding.
    pub fn rollout_policy(&self, z: &LatentTask) -> RolloutPolicy<'_> {
        RolloutPolicy::new(self, z)
    }

    pub fn save(&self, path: &std::path::Path, step: u64) -> Result<()> {
        let mut all = self.params.clone();
        for p in self.targets.iter() {
            all.add_frozen(&format!("target.{}", p.name), p.tensor.clone())?;
        }
        let hyper = json!({"kind": "fb", "cfg": self.cfg.to_json()});
        checkpoint::save(path, &all, &hyper, step)
    }

    pub fn load(path: &std::path::Path) -> Result<(FbModel, u64)> {
        let (all, hyper, step) = checkpoint::load(path)?;
        if hyper["kind"] != "fb" {
            return Err(FbmError::Format(format!(
                "checkpoint kind {} is not an FB model",
                hyper["kind"]
            )));
        }
        let cfg = ModelConfig::from_json(&hyper["cfg"])?;
        let mut model = FbModel::init(cfg)?;
        restore_params(&mut model.params, &mut model.targets, &all)?;
        Ok((model, step))
    }

    /// Greedy discrete action from the critic at an encoded context.
    pub fn greedy_discrete(
        &self,
        context: &Tensor,
        cur: &Tensor,
        z: &Tensor,
    ) -> Result<usize> {
        let ActionSpace::Discrete(n_actions) = self.cfg.action_space else {
            return Err(FbmError::contract("greedy_discrete needs a discrete space"));
        };
        let mut g = Graph::new();
        let bp = self.params.bind_frozen(&mut g);
        let ctx = g.constant(context.clone());
        let cv = g.constant(cur.clone());
        let zv = g.constant(z.clone());
        let mut best = (0usize, f64::NEG_INFINITY);
        for a in 0..n_actions {
            let mut onehot = Tensor::zeros(1, n_actions);
            onehot.set(0, a, 1.0);
            let av = g.constant(onehot);
            let f = self.f_forward(&mut g, &bp, ctx, cv, av, zv);
            let q = g.row_dot(f, zv);
            let v = g.value(q).item();
            if v > best.1 {
                best = (a, v);
            }
        }
        Ok(best.0)
    }
}

/// Rescales a nonzero vector to the sqrt(d) sphere; zero vectors stay zero.
fn rescale_to_sphere(z: &mut [f64]) {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        let target = (z.len() as f64).sqrt();
        for v in z.iter_mut() {
            *v *= target / norm;
        }
    }
}

fn restore_params(params: &mut ParamSet, targets: &mut ParamSet, loaded: &ParamSet) -> Result<()> {
    for p in loaded.iter() {
        if let Some(name) = p.name.strip_prefix("target.") {
            if !targets.contains(name) {
                return Err(FbmError::Format(format!(
                    "checkpoint target parameter '{name}' does not fit the model"
                )));
            }
            if targets.tensor(name).shape() != p.tensor.shape() {
                return Err(FbmError::Format(format!(
                    "checkpoint shape mismatch for target '{name}'"
                )));
            }
            targets.set_tensor(name, p.tensor.clone());
        } else {
            if !params.contains(&p.name) {
                return Err(FbmError::Format(format!(
                    "checkpoint parameter '{}' does not fit the model",
                    p.name
                )));
            }
            if params.tensor(&p.name).shape() != p.tensor.shape() {
                return Err(FbmError::Format(format!(
                    "checkpoint shape mismatch for '{}'",
                    p.name
                )));
            }
            params.set_tensor(&p.name, p.tensor.clone());
        }
    }
    Ok(())
}

/// Streaming action selection over an episode: keeps one hidden/context
/// stream per consumer and conditions on the entire history, starting from
/// zero hidden states.
pub struct RolloutPolicy<'m> {
    model: &'m FbModel,
    z: Tensor,
    pi_stream: ConsumerStream,
    f_stream: ConsumerStream,
    last_action: Vec<f64>,
}

impl<'m> RolloutPolicy<'m> {
    fn new(model: &'m FbModel, z: &LatentTask) -> Self {
        RolloutPolicy {
            model,
            z: Tensor::row_vector(z.z.clone()),
            pi_stream: ConsumerStream::new(&model.enc_pi, model.wiring(Consumer::Policy)),
            f_stream: ConsumerStream::new(&model.enc_f, model.wiring(Consumer::Forward)),
            last_action: vec![0.0; model.cfg.act_enc_dim()],
        }
    }

    /// Consumes the newest observation (plus the privileged true state) and
    /// returns the deterministic action.
    pub fn act(&mut self, obs: &[f64], state: &[f64]) -> Result<Action> {
        let pi_input = self.pi_stream.current_input(obs, state).to_vec();
        self.pi_stream.update(
            &self.model.params,
            &self.model.enc_pi,
            &self.last_action.clone(),
            &pi_input,
        );
        match self.model.cfg.action_space {
            ActionSpace::Continuous(_) => {
                let ctx = self.pi_stream.context(&self.model.enc_pi);
                let mut g = Graph::new();
                let bp = self.model.params.bind_frozen(&mut g);
                let ctxv = g.constant(ctx);
                let curv = g.constant(Tensor::row_vector(pi_input));
                let zv = g.constant(self.z.clone());
                let a = self.model.pi_forward(&mut g, &bp, ctxv, curv, zv);
                let av = g.value(a).data().to_vec();
                self.last_action = av.clone();
                Ok(Action::Continuous(av))
            }
            ActionSpace::Discrete(n) => {
                let f_input = self.f_stream.current_input(obs, state).to_vec();
                self.f_stream.update(
                    &self.model.params,
                    &self.model.enc_f,
                    &self.last_action.clone(),
                    &f_input,
                );
                let ctx = self.f_stream.context(&self.model.enc_f);
                let a = self.model.greedy_discrete(
                    &ctx,
                    &Tensor::row_vector(f_input),
                    &self.z,
                )?;
                let mut enc = vec![0.0; n];
                enc[a] = 1.0;
                self.last_action = enc;
                Ok(Action::Discrete(a))
            }
        }
    }

    /// Also advance the policy-independent forward stream for continuous
    /// spaces (kept in lockstep for diagnostics; discrete spaces update it in
    /// `act`).
    pub fn reset(&mut self) {
        self.pi_stream = ConsumerStream::new(&self.model.enc_pi, self.model.wiring(Consumer::Policy));
        self.f_stream = ConsumerStream::new(&self.model.enc_f, self.model.wiring(Consumer::Forward));
        self.last_action = vec![0.0; self.model.cfg.act_enc_dim()];
    }
}

/// Universal successor features with memory: psi(enc, a, z) with frozen random
/// features phi over the same encoded context, plus a policy tower. Tasks are
/// inferred by ridge regression of rewards onto features.
pub struct UsfModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    pub targets: ParamSet,
    enc_psi: MemoryEncoder,
    enc_pi: MemoryEncoder,
    pre_oa: Mlp,
    pre_oz: Mlp,
    psi_net: Mlp,
    phi_net: Mlp,
    pre_pi_oz: Mlp,
    pi_net: Mlp,
}

pub const USF_TARGET_PREFIXES: [&str; 1] = ["psi."];
const RIDGE_EPS: f64 = 1e-6;

impl UsfModel {
    pub fn init(cfg: ModelConfig) -> Result<UsfModel> {
        let ActionSpace::Continuous(act_dim) = cfg.action_space else {
            return Err(FbmError::contract(
                "the USF variant is implemented for continuous action spaces",
            ));
        };
        let mut ps = ParamSet::new();
        let mut rng = Rng::stream(cfg.seed, "usf_init");
        let w_psi = wiring_for(cfg.variant, cfg.routing, Consumer::Forward);
        let w_pi = wiring_for(cfg.variant, cfg.routing, Consumer::Policy);
        let enc_psi = build_encoder(&mut ps, "psi.enc", &cfg, w_psi, cfg.l_forward, &mut rng)?;
        let enc_pi = build_encoder(&mut ps, "pi.enc", &cfg, w_pi, cfg.l_forward, &mut rng)?;
        let psi_cur = if w_psi.use_state { cfg.state_dim } else { cfg.obs_dim };
        let pi_cur = if w_pi.use_state { cfg.state_dim } else { cfg.obs_dim };
        let pre_oa = Mlp::init(
            &mut ps,
            "psi.pre_oa",
            psi_cur + act_dim,
            &[],
            cfg.preproc_dim,
            true,
            OutputActivation::Tanh,
            &mut rng,
        )?;
        let pre_oz = Mlp::init(
            &mut ps,
            "psi.pre_oz",
            psi_cur + cfg.d,
            &[],
            cfg.preproc_dim,
            true,
            OutputActivation::Tanh,
            &mut rng,
        )?;
        let psi_net = Mlp::init(
            &mut ps,
            "psi.net",
            enc_psi.output_dim() + 2 * cfg.preproc_dim,
            &cfg.f_hidden,
            cfg.d,
            true,
            OutputActivation::Linear,
            &mut rng,
        )?;
        // frozen random feature map over the encoded context
        let phi_net = Mlp::init(
            &mut ps,
            "phi.net",
            enc_psi.output_dim(),
            &cfg.b_hidden,
            cfg.d,
            true,
            OutputActivation::Tanh,
            &mut rng,
        )?;
        let pre_pi_oz = Mlp::init(
            &mut ps,
            "pi.pre_oz",
            pi_cur + cfg.d,
            &[],
            cfg.preproc_dim,
            true,
            OutputActivation::Tanh,
            &mut rng,
        )?;
        let pi_net = Mlp::init(
            &mut ps,
            "pi.net",
            enc_pi.output_dim() + cfg.preproc_dim,
            &cfg.pi_hidden,
            act_dim,
            true,
            OutputActivation::Tanh,
            &mut rng,
        )?;
        // phi stays frozen for the whole training run
        for p in ps.iter_mut() {
            if p.name.starts_with("phi.") {
                p.trainable = false;
            }
        }
        let targets = ps.clone_subset_frozen(&USF_TARGET_PREFIXES);
        Ok(UsfModel {
            cfg,
            params: ps,
            targets,
            enc_psi,
            enc_pi,
            pre_oa,
            pre_oz,
            psi_net,
            phi_net,
            pre_pi_oz,
            pi_net,
        })
    }

    fn psi_context(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        batch: &TrajectoryBatch,
    ) -> Result<(Var, Var)> {
        consumer_context(
            g,
            bp,
            &self.enc_psi,
            wiring_for(self.cfg.variant, self.cfg.routing, Consumer::Forward),
            batch,
        )
    }

    fn pi_context(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        batch: &TrajectoryBatch,
    ) -> Result<(Var, Var)> {
        consumer_context(
            g,
            bp,
            &self.enc_pi,
            wiring_for(self.cfg.variant, self.cfg.routing, Consumer::Policy),
            batch,
        )
    }

    pub fn psi_forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        context: Var,
        cur: Var,
        action: Var,
        z: Var,
    ) -> Var {
        let oa_in = g.concat_cols(&[cur, action]);
        let oa = self.pre_oa.forward(g, bp, oa_in);
        let oz_in = g.concat_cols(&[cur, z]);
        let oz = self.pre_oz.forward(g, bp, oz_in);
        let psi_in = g.concat_cols(&[context, oa, oz]);
        self.psi_net.forward(g, bp, psi_in)
    }

    pub fn phi_forward(&self, g: &mut Graph, bp: &BoundParams, context: Var) -> Var {
        self.phi_net.forward(g, bp, context)
    }

    pub fn pi_forward(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        context: Var,
        cur: Var,
        z: Var,
    ) -> Var {
        let oz_in = g.concat_cols(&[cur, z]);
        let oz = self.pre_pi_oz.forward(g, bp, oz_in);
        let pi_in = g.concat_cols(&[context, oz]);
        self.pi_net.forward(g, bp, pi_in)
    }

    /// TD loss: mean_i || psi(enc_i, a_i, z_i) - (phi(enc'_i) + gamma
    /// psibar(enc'_i, pi(enc'_i, z_i), z_i)) ||^2 with the target tower on the
    /// successor side.
    #[allow(clippy::too_many_arguments)]
    pub fn usf_td_loss(
        &self,
        g: &mut Graph,
        online: &BoundParams,
        target: &BoundParams,
        slice: &SliceBatch,
        z: &Tensor,
        smoothing: Option<(f64, f64)>,
        rng: &mut Rng,
    ) -> Result<Var> {
        let bt_t = TrajectoryBatch::from_trajectories(&slice.tau_t)?;
        let bt_next = TrajectoryBatch::from_trajectories(&slice.tau_next)?;
        let zv = g.constant(z.clone());
        let actions = g.constant(slice.actions.clone());

        let (ctx, cur) = self.psi_context(g, online, &bt_t)?;
        let psi = self.psi_forward(g, online, ctx, cur, actions, zv);

        // target: phi and psibar share the target encoder's context; phi is
        // frozen so it has no target copy and is read through the online set
        let (ctx_next, cur_next) = self.psi_context(g, target, &bt_next)?;
        let phi_next = self.phi_forward(g, online, ctx_next);
        let (ctx_pi, cur_pi) = self.pi_context(g, online, &bt_next)?;
        let a_next = self.pi_forward(g, online, ctx_pi, cur_pi, zv);
        let mut a_next_v = g.value(a_next).clone();
        if let Some((sigma, clip)) = smoothing {
            a_next_v = crate::trainer::smoothed_action(&a_next_v, rng, sigma, clip);
        }
        let na = g.constant(a_next_v);
        let psi_bar = self.psi_forward(g, target, ctx_next, cur_next, na, zv);
        let psi_bar_g = g.scale(psi_bar, self.cfg.gamma);
        let y = g.add(phi_next, psi_bar_g);

        let diff = g.sub(psi, y);
        let sq = g.square(diff);
        let per_row = g.row_sum(sq);
        Ok(g.mean_all(per_row))
    }

    pub fn policy_loss(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        tau: &[Trajectory],
        z: &Tensor,
    ) -> Result<Var> {
        let bt = TrajectoryBatch::from_trajectories(tau)?;
        let zv = g.constant(z.clone());
        let (ctx_pi, cur_pi) = self.pi_context(g, bp, &bt)?;
        let a = self.pi_forward(g, bp, ctx_pi, cur_pi, zv);
        let (ctx, cur) = self.psi_context(g, bp, &bt)?;
        let psi = self.psi_forward(g, bp, ctx, cur, a, zv);
        let q = g.row_dot(psi, zv);
        let mq = g.mean_all(q);
        Ok(g.neg(mq))
    }

    /// phi(enc(tau)) rows without gradients.
    pub fn feature_rows(&self, trajectories: &[Trajectory]) -> Result<Tensor> {
        if trajectories.is_empty() {
            return Err(FbmError::contract("no trajectories to encode"));
        }
        let mut out = Tensor::zeros(trajectories.len(), self.cfg.d);
        let mut row = 0;
        for chunk in trajectories.chunks(INFER_CHUNK) {
            let bt = TrajectoryBatch::from_trajectories(chunk)?;
            let mut g = Graph::new();
            let bp = self.params.bind_frozen(&mut g);
            let (ctx, _) = self.psi_context(&mut g, &bp, &bt)?;
            let phi = self.phi_forward(&mut g, &bp, ctx);
            let pv = g.value(phi);
            for r in 0..chunk.len() {
                out.row_mut(row).copy_from_slice(pv.row(r));
                row += 1;
            }
        }
        Ok(out)
    }

    /// Ridge least squares z = (Phi^T Phi + eps I)^{-1} Phi^T R.
    pub fn infer_task(&self, labelled: &[LabelledSample]) -> Result<LatentTask> {
        if labelled.is_empty() {
            return Err(FbmError::contract("task inference needs labelled samples"));
        }
        let trajectories: Vec<Trajectory> =
            labelled.iter().map(|s| s.trajectory.clone()).collect();
        let phi = self.feature_rows(&trajectories)?;
        let rewards: Vec<f64> = labelled.iter().map(|s| s.reward).collect();
        let mut z = ridge_regression(&phi, &rewards, RIDGE_EPS)?;
        if self.cfg.normalize_inferred_z {
            rescale_to_sphere(&mut z);
        }
        LatentTask::new(z, super::ZSource::Inferred)
    }

    pub fn rollout_policy(&self, z: &LatentTask) -> UsfRolloutPolicy<'_> {
        UsfRolloutPolicy {
            model: self,
            z: Tensor::row_vector(z.z.clone()),
            pi_stream: ConsumerStream::new(
                &self.enc_pi,
                wiring_for(self.cfg.variant, self.cfg.routing, Consumer::Policy),
            ),
            last_action: vec![0.0; self.cfg.act_enc_dim()],
        }
    }

    pub fn save(&self, path: &std::path::Path, step: u64) -> Result<()> {
        let mut all = self.params.clone();
        for p in self.targets.iter() {
            all.add_frozen(&format!("target.{}", p.name), p.tensor.clone())?;
        }
        let hyper = json!({"kind": "usf", "cfg": self.cfg.to_json()});
        checkpoint::save(path, &all, &hyper, step)
    }

    pub fn load(path: &std::path::Path) -> Result<(UsfModel, u64)> {
        let (all, hyper, step) = checkpoint::load(path)?;
        if hyper["kind"] != "usf" {
            return Err(FbmError::Format(format!(
                "checkpoint kind {} is not a USF model",
                hyper["kind"]
            )));
        }
        let cfg = ModelConfig::from_json(&hyper["cfg"])?;
        let mut model = UsfModel::init(cfg)?;
        restore_params(&mut model.params, &mut model.targets, &all)?;
        Ok((model, step))
    }
}

/// Solves (Phi^T Phi + eps I) z = Phi^T r.
pub fn ridge_regression(phi: &Tensor, rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    let (k, d) = phi.shape();
    if rewards.len() != k {
        return Err(FbmError::contract("design/label length mismatch"));
    }
    let mut gram = vec![0.0; d * d];
    for i in 0..k {
        let row = phi.row(i);
        for a in 0..d {
            for b in 0..d {
                gram[a * d + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        gram[a * d + a] += eps;
    }
    let mut rhs = vec![0.0; d];
    for i in 0..k {
        for (a, v) in phi.row(i).iter().enumerate() {
            rhs[a] += v * rewards[i];
        }
    }
    solve_dense(&gram, &rhs, d, 1)
}

/// Streaming rollout policy for the USF model.
pub struct UsfRolloutPolicy<'m> {
    model: &'m UsfModel,
    z: Tensor,
    pi_stream: ConsumerStream,
    last_action: Vec<f64>,
}

impl UsfRolloutPolicy<'_> {
    pub fn act(&mut self, obs: &[f64], state: &[f64]) -> Result<Action> {
        let input = self.pi_stream.current_input(obs, state).to_vec();
        self.pi_stream.update(
            &self.model.params,
            &self.model.enc_pi,
            &self.last_action.clone(),
            &input,
        );
        let ctx = self.pi_stream.context(&self.model.enc_pi);
        let mut g = Graph::new();
        let bp = self.model.params.bind_frozen(&mut g);
        let ctxv = g.constant(ctx);
        let curv = g.constant(Tensor::row_vector(input));
        let zv = g.constant(self.z.clone());
        let a = self.model.pi_forward(&mut g, &bp, ctxv, curv, zv);
        let av = g.value(a).data().to_vec();
        self.last_action = av.clone();
        Ok(Action::Continuous(av))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfm::ZSource;

    fn point_cfg(variant: Variant, routing: Routing, seed: u64) -> ModelConfig {
        let mut cfg = ModelConfig::desk(
            variant,
            routing,
            4,
            4,
            ActionSpace::Continuous(2),
            0.98,
            seed,
        );
        cfg.d = 6;
        cfg.f_hidden = vec![16, 16];
        cfg.b_hidden = vec![12, 12];
        cfg.pi_hidden = vec![16, 16];
        cfg.preproc_dim = 8;
        cfg.embed_dim = 8;
        cfg.gru_hidden = 8;
        cfg.l_forward = 3;
        cfg.l_backward = 3;
        cfg
    }

    fn toy_slice(model_cfg: &ModelConfig, n: usize, seed: u64) -> SliceBatch {
        use crate::envgen::{DeskEnv, DynamicsConfig, OcclusionConfig, PointMass};
        let env = DeskEnv::Point(PointMass::new(20, 0.98, crate::envgen::InitialDist::Uniform).unwrap());
        let ds = crate::data::generate_dataset(
            &env,
            crate::data::BehaviourPolicy::ou_default(),
            &OcclusionConfig::fully_observed(),
            DynamicsConfig::base(),
            2,
            seed,
        )
        .unwrap();
        let mut rng = Rng::from_seed(seed);
        ds.sample_slices(n, model_cfg.l_forward, model_cfg.l_backward, &mut rng)
            .unwrap()
    }

    #[test]
    fn backward_outputs_have_norm_sqrt_d() {
        let model = FbModel::init(point_cfg(Variant::FbM, Routing::All, 3)).unwrap();
        let slice = toy_slice(&model.cfg, 8, 5);
        let b = model.backward_outputs(&slice.tau_future).unwrap();
        let target = (model.cfg.d as f64).sqrt();
        for r in 0..b.rows() {
            let norm = b.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - target).abs() < 1e-9, "row {r} norm {norm}");
        }
    }

    #[test]
    fn fb_loss_rejects_tiny_batches() {
        let model = FbModel::init(point_cfg(Variant::Fb, Routing::All, 1)).unwrap();
        let slice = toy_slice(&model.cfg, 1, 2);
        let z = Tensor::zeros(1, model.cfg.d);
        let mut g = Graph::new();
        let online = model.params.bind_all(&mut g);
        let target = model.targets.bind_frozen(&mut g);
        let mut rng = Rng::from_seed(0);
        let err = model
            .fb_td_loss(&mut g, &online, &target, &slice, &z, None, &mut rng)
            .unwrap_err();
        assert!(err.to_string().contains("at least 2"));
    }

    #[test]
    fn critic_loss_sends_no_gradients_to_policy_or_targets() {
        let model = FbModel::init(point_cfg(Variant::Fb, Routing::All, 7)).unwrap();
        let slice = toy_slice(&model.cfg, 4, 3);
        let mut rng = Rng::from_seed(1);
        let zs = crate::bfm::sample_z(&mut rng, 4, model.cfg.d, None, 1.0).unwrap();
        let z = crate::bfm::z_batch_tensor(&zs);
        let mut g = Graph::new();
        let online = model
            .params
            .bind(&mut g, &|n| n.starts_with("f.") || n.starts_with("b."));
        let target = model.targets.bind_frozen(&mut g);
        let loss = model
            .fb_td_loss(&mut g, &online, &target, &slice, &z, Some((0.2, 0.3)), &mut rng)
            .unwrap();
        let grads = g.backward(loss).unwrap();
        let online_grads = online.collect_grads(&grads);
        assert!(online_grads.keys().all(|k| !k.starts_with("pi.")));
        assert!(!online_grads.is_empty());
        let target_grads = target.collect_grads(&grads);
        assert!(target_grads.is_empty(), "targets must stay gradient-free");
    }

    #[test]
    fn policy_loss_touches_only_the_policy_tower() {
        let model = FbModel::init(point_cfg(Variant::FbM, Routing::All, 11)).unwrap();
        let slice = toy_slice(&model.cfg, 4, 9);
        let mut rng = Rng::from_seed(2);
        let zs = crate::bfm::sample_z(&mut rng, 4, model.cfg.d, None, 1.0).unwrap();
        let z = crate::bfm::z_batch_tensor(&zs);
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, &|n| n.starts_with("pi."));
        let loss = model.policy_loss(&mut g, &bound, &slice.tau_t, &z).unwrap();
        let grads = g.backward(loss).unwrap();
        let gmap = bound.collect_grads(&grads);
        assert!(!gmap.is_empty());
        assert!(gmap.keys().all(|k| k.starts_with("pi.")));
    }

    #[test]
    fn hand_evaluated_loss_on_bias_only_networks() {
        // zero out every weight so F, B and the targets emit constant rows,
        // then check the loss against direct arithmetic
        let mut cfg = point_cfg(Variant::Fb, Routing::All, 13);
        cfg.d = 2;
        cfg.lambda_orth = 1.0;
        let mut model = FbModel::init(cfg).unwrap();
        let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
        for name in &names {
            let t = model.params.tensor(name).clone();
            model
                .params
                .set_tensor(name, Tensor::zeros(t.rows(), t.cols()));
        }
        // final-layer biases pin the outputs
        let f_bias = vec![0.5, -0.25];
        let b_bias = vec![3.0, 4.0]; // normalizes to sqrt(2)*(0.6, 0.8)
        model
            .params
            .set_tensor("f.net.l2.b", Tensor::row_vector(f_bias.clone()));
        model
            .params
            .set_tensor("b.net.l2.b", Tensor::row_vector(b_bias.clone()));
        // refresh targets to the same constants
        model.targets = model.params.clone_subset_frozen(&FB_TARGET_PREFIXES);

        let slice = toy_slice(&model.cfg, 2, 4);
        let z = Tensor::from_fn(2, 2, |_, c| if c == 0 { 1.0 } else { 0.0 });
        let mut g = Graph::new();
        let online = model.params.bind_all(&mut g);
        let target = model.targets.bind_frozen(&mut g);
        let mut rng = Rng::from_seed(3);
        let loss = model
            .fb_td_loss(&mut g, &online, &target, &slice, &z, None, &mut rng)
            .unwrap();
        let got = g.value(loss).item();

        // by hand: b = sqrt(2) * (0.6, 0.8); f = fbar = (0.5, -0.25)
        let s2 = 2.0f64.sqrt();
        let b = [0.6 * s2, 0.8 * s2];
        let fb = f_bias[0] * b[0] + f_bias[1] * b[1];
        let quadratic = (fb - model.cfg.gamma * fb).powi(2);
        let align = -2.0 * fb;
        // cov = b b^T (both rows identical), reg = ||bb^T - I||_F^2
        let c00 = b[0] * b[0];
        let c01 = b[0] * b[1];
        let c11 = b[1] * b[1];
        let reg = (c00 - 1.0).powi(2) + 2.0 * c01.powi(2) + (c11 - 1.0).powi(2);
        let expected = quadratic + align + reg;
        assert!(
            (got - expected).abs() < 1e-9,
            "loss {got} vs hand value {expected}"
        );
    }

    #[test]
    fn q_is_the_dot_product_with_z() {
        // with bias-only networks, Q = f_bias . z for any input
        let mut cfg = point_cfg(Variant::Fb, Routing::All, 17);
        cfg.d = 3;
        let mut model = FbModel::init(cfg).unwrap();
        let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
        for name in &names {
            let t = model.params.tensor(name).clone();
            model
                .params
                .set_tensor(name, Tensor::zeros(t.rows(), t.cols()));
        }
        let d = 3usize;
        let c = 0.7;
        // F output = c * z_unit for z = sqrt(d) * e1: F = (c, 0, 0)
        model
            .params
            .set_tensor("f.net.l2.b", Tensor::row_vector(vec![c, 0.0, 0.0]));
        let slice = toy_slice(&model.cfg, 2, 8);
        let bt = TrajectoryBatch::from_trajectories(&slice.tau_t).unwrap();
        let sqrt_d = (d as f64).sqrt();
        let z = Tensor::from_fn(2, d, |_, cix| if cix == 0 { sqrt_d } else { 0.0 });
        let mut g = Graph::new();
        let bp = model.params.bind_frozen(&mut g);
        let q = model
            .q_values(&mut g, &bp, &bt, &slice.actions, &z)
            .unwrap();
        // Q = F . z = c/sqrt(d) * d = c * sqrt(d)
        for r in 0..2 {
            assert!((g.value(q).get(r, 0) - c * sqrt_d).abs() < 1e-12);
        }
        // orthogonal z gives Q = 0
        let z_orth = Tensor::from_fn(2, d, |_, cix| if cix == 1 { sqrt_d } else { 0.0 });
        let mut g2 = Graph::new();
        let bp2 = model.params.bind_frozen(&mut g2);
        let q2 = model
            .q_values(&mut g2, &bp2, &bt, &slice.actions, &z_orth)
            .unwrap();
        for r in 0..2 {
            assert!(g2.value(q2).get(r, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn task_inference_is_linear_and_handles_edge_cases() {
        let model = FbModel::init(point_cfg(Variant::FbM, Routing::All, 23)).unwrap();
        let slice = toy_slice(&model.cfg, 6, 10);
        let mk = |rewards: &[f64]| -> Vec<LabelledSample> {
            slice
                .tau_future
                .iter()
                .zip(rewards)
                .map(|(t, &r)| LabelledSample {
                    trajectory: t.clone(),
                    reward: r,
                })
                .collect()
        };
        // all-zero rewards give z = 0
        let z0 = model.infer_task(&mk(&[0.0; 6])).unwrap();
        assert!(z0.z.iter().all(|&v| v == 0.0));
        assert_eq!(z0.source, ZSource::Inferred);
        // single-sample reward 1 gives exactly B(tau)
        let single = vec![mk(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0])[0].clone()];
        let z1 = model.infer_task(&single).unwrap();
        let b = model
            .backward_outputs(&[single[0].trajectory.clone()])
            .unwrap();
        for (a, e) in z1.z.iter().zip(b.row(0)) {
            assert!((a - e).abs() < 1e-12);
        }
        // exact linearity in the rewards
        let r1 = [0.2, -0.4, 1.0, 0.0, 0.3, -1.0];
        let r2 = [1.0, 0.5, -0.2, 0.8, 0.0, 0.1];
        let (alpha, beta) = (0.7, -1.3);
        let combined: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| alpha * a + beta * b).collect();
        let za = model.infer_task(&mk(&r1)).unwrap();
        let zb = model.infer_task(&mk(&r2)).unwrap();
        let zc = model.infer_task(&mk(&combined)).unwrap();
        for i in 0..model.cfg.d {
            let lin = alpha * za.z[i] + beta * zb.z[i];
            assert!((zc.z[i] - lin).abs() < 1e-12, "nonlinear at {i}");
        }
    }

    #[test]
    fn privileged_routing_feeds_true_states() {
        let model = FbModel::init(point_cfg(Variant::FbM, Routing::BackwardOnly, 29)).unwrap();
        // F is memory-free over states, B keeps the GRU over observations
        assert_eq!(
            model.wiring(Consumer::Forward),
            Wiring {
                kind: MemoryKind::LastObs,
                use_state: true
            }
        );
        assert_eq!(
            model.wiring(Consumer::Backward),
            Wiring {
                kind: MemoryKind::Gru,
                use_state: false
            }
        );
        let slice = toy_slice(&model.cfg, 3, 6);
        let bt = TrajectoryBatch::from_trajectories(&slice.tau_t).unwrap();
        let mut g = Graph::new();
        let bp = model.params.bind_frozen(&mut g);
        let (ctx, _) = model.context(&mut g, &bp, Consumer::Forward, &bt).unwrap();
        assert_eq!(g.value(ctx), bt.terminal_states.as_ref().unwrap());
    }

    #[test]
    fn memory_free_fb_and_unit_context_fb_m_see_the_same_inputs() {
        // with L = 1 on a fully observed stream, the FB-M window carries
        // exactly (a_{t-1}, o_t) and the memory-free current input is o_t
        let mut cfg = point_cfg(Variant::FbM, Routing::All, 31);
        cfg.l_forward = 1;
        cfg.l_backward = 1;
        let model = FbModel::init(cfg).unwrap();
        let slice = toy_slice(&model.cfg, 3, 12);
        let bt = TrajectoryBatch::from_trajectories(&slice.tau_t).unwrap();
        assert_eq!(bt.len, 1);
        assert_eq!(bt.steps[0].1, bt.last_obs);
        let fb = FbModel::init(point_cfg(Variant::Fb, Routing::All, 31)).unwrap();
        let mut g = Graph::new();
        let bp = fb.params.bind_frozen(&mut g);
        let (ctx, cur) = fb.context(&mut g, &bp, Consumer::Forward, &bt).unwrap();
        assert_eq!(g.value(ctx), &bt.last_obs);
        assert_eq!(g.value(cur), &bt.last_obs);
    }

    #[test]
    fn usf_gamma_zero_regresses_onto_features() {
        let mut cfg = point_cfg(Variant::UsfM, Routing::All, 37);
        cfg.gamma = 0.0;
        let model = UsfModel::init(cfg).unwrap();
        let slice = toy_slice(&model.cfg, 4, 14);
        let mut rng = Rng::from_seed(4);
        let zs = crate::bfm::sample_z(&mut rng, 4, model.cfg.d, None, 1.0).unwrap();
        let z = crate::bfm::z_batch_tensor(&zs);
        let mut g = Graph::new();
        let online = model.params.bind_all(&mut g);
        let target = model.targets.bind_frozen(&mut g);
        let loss = model
            .usf_td_loss(&mut g, &online, &target, &slice, &z, None, &mut rng)
            .unwrap();
        // with gamma = 0 the loss is exactly mean_i ||psi_i - phi(next_i)||^2
        let bt_t = TrajectoryBatch::from_trajectories(&slice.tau_t).unwrap();
        let bt_next = TrajectoryBatch::from_trajectories(&slice.tau_next).unwrap();
        let mut g2 = Graph::new();
        let online2 = model.params.bind_frozen(&mut g2);
        let target2 = model.targets.bind_frozen(&mut g2);
        let zv = g2.constant(z.clone());
        let av = g2.constant(slice.actions.clone());
        let (ctx, cur) = model.psi_context(&mut g2, &online2, &bt_t).unwrap();
        let psi = model.psi_forward(&mut g2, &online2, ctx, cur, av, zv);
        let (ctx_n, _) = model.psi_context(&mut g2, &target2, &bt_next).unwrap();
        let phi = model.phi_forward(&mut g2, &online2, ctx_n);
        let mut expected = 0.0;
        for r in 0..4 {
            for c in 0..model.cfg.d {
                let dv = g2.value(psi).get(r, c) - g2.value(phi).get(r, c);
                expected += dv * dv;
            }
        }
        expected /= 4.0;
        assert!((g.value(loss).item() - expected).abs() < 1e-9);
    }

    #[test]
    fn ridge_recovers_planted_weights_on_full_rank_designs() {
        let mut rng = Rng::from_seed(41);
        let (k, d) = (200, 8);
        let phi = Tensor::from_fn(k, d, |_, _| rng.normal());
        let z_star: Vec<f64> = (0..d).map(|i| (i as f64 * 0.31).sin()).collect();
        let rewards: Vec<f64> = (0..k)
            .map(|i| phi.row(i).iter().zip(&z_star).map(|(p, z)| p * z).sum())
            .collect();
        let z = ridge_regression(&phi, &rewards, 1e-6).unwrap();
        for (a, e) in z.iter().zip(&z_star) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
        // zero rewards give z = 0
        let z0 = ridge_regression(&phi, &vec![0.0; k], 1e-6).unwrap();
        assert!(z0.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn ridge_on_rank_deficient_design_is_minimum_norm_biased() {
        // duplicate columns: least squares is underdetermined, ridge splits
        // the weight evenly (the minimum-norm solution)
        let mut rng = Rng::from_seed(43);
        let k = 100;
        let col: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let phi = Tensor::from_fn(k, 2, |r, _| col[r]);
        let rewards: Vec<f64> = col.iter().map(|c| 2.0 * c).collect();
        let z = ridge_regression(&phi, &rewards, 1e-6).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
        assert!((z[0] - 1.0).abs() < 1e-4, "z = {z:?}");
        assert!((z[1] - 1.0).abs() < 1e-4, "z = {z:?}");
    }

    #[test]
    fn checkpoint_round_trip_restores_the_model() {
        let dir = std::env::temp_dir().join("fbm_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.fbck");
        let model = FbModel::init(point_cfg(Variant::FbStack, Routing::All, 47)).unwrap();
        model.save(&path, 123).unwrap();
        let (loaded, step) = FbModel::load(&path).unwrap();
        assert_eq!(step, 123);
        assert_eq!(loaded.cfg.variant, Variant::FbStack);
        for p in model.params.iter() {
            assert_eq!(loaded.params.tensor(&p.name), &p.tensor, "{}", p.name);
        }
        for p in model.targets.iter() {
            assert_eq!(loaded.targets.tensor(&p.name), &p.tensor, "{}", p.name);
        }
        std::fs::remove_file(&path).ok();
    }
}
