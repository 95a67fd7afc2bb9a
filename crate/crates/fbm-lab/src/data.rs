//! Offline reward-free datasets: generation, storage, slicing, labelling.
//!
//! Datasets store true states, occluded observations, and raw actions per
//! step, with a per-episode dynamics tag. Occlusion is applied at generation
//! time and stored, so training batches are reproducible draws. True states
//! are only reachable through labelled-set construction and oracle APIs.
//!
//! On disk a dataset is one file: a JSON header line (schema version,
//! metadata, episode shapes), then raw little-endian f64 blocks per episode
//! in states/observations/actions order.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::envgen::{
    observe, Action, ActionSpace, DeskEnv, DynamicsConfig, MarkovState, OcclusionConfig,
    OcclusionMode, Routing, TaskReward,
};
use crate::error::{FbmError, Result};
use crate::memory::Trajectory;
use crate::rng::Rng;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Behaviour policies for reward-free collection. `OuExplore` drifts around a
/// per-episode random target with Ornstein-Uhlenbeck noise on continuous
/// spaces; on discrete spaces it degrades to a sticky random walk (keep the
/// previous action, resample uniformly with the switch probability).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BehaviourPolicy {
    UniformRandom,
    OuExplore { theta: f64, sigma: f64 },
}

impl BehaviourPolicy {
    pub fn ou_default() -> Self {
        BehaviourPolicy::OuExplore {
            theta: 0.15,
            sigma: 0.3,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform_random" => Ok(BehaviourPolicy::UniformRandom),
            "ou_explore" => Ok(BehaviourPolicy::ou_default()),
            other => Err(FbmError::Config(format!(
                "unknown behaviour policy '{other}' (expected uniform_random|ou_explore)"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            BehaviourPolicy::UniformRandom => "uniform_random",
            BehaviourPolicy::OuExplore { .. } => "ou_explore",
        }
    }
}

const STICKY_SWITCH_PROB: f64 = 0.3;

/// One episode: T rows of (state, observation, action) plus a dynamics tag.
#[derive(Clone, Debug)]
pub struct EpisodeData {
    pub states: Tensor,
    pub observations: Tensor,
    pub actions: Tensor,
    pub dynamics: DynamicsConfig,
}

impl EpisodeData {
    pub fn steps(&self) -> usize {
        self.states.rows()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub env_id: String,
    pub env_spec_hash: String,
    pub occlusion_mode: String,
    pub occlusion_sigma: f64,
    pub occlusion_p: f64,
    pub behaviour: String,
    pub seed: u64,
    pub action_space: String,
}

impl DatasetMeta {
    pub fn occlusion(&self) -> Result<OcclusionConfig> {
        let mode = match self.occlusion_mode.as_str() {
            "none" => OcclusionMode::None,
            "noisy" => OcclusionMode::Noisy {
                sigma: self.occlusion_sigma,
            },
            "flickering" => OcclusionMode::Flickering {
                p: self.occlusion_p,
            },
            "hidden_velocity" => OcclusionMode::HiddenVelocity,
            other => {
                return Err(FbmError::Format(format!(
                    "unknown occlusion mode '{other}' in dataset meta"
                )))
            }
        };
        OcclusionConfig::new(mode, Routing::All)
    }

    pub fn action_space(&self) -> Result<ActionSpace> {
        let (kind, n) = self
            .action_space
            .split_once(':')
            .ok_or_else(|| FbmError::Format("malformed action space".into()))?;
        let n: usize = n
            .parse()
            .map_err(|_| FbmError::Format("malformed action space size".into()))?;
        match kind {
            "discrete" => Ok(ActionSpace::Discrete(n)),
            "continuous" => Ok(ActionSpace::Continuous(n)),
            _ => Err(FbmError::Format("malformed action space kind".into())),
        }
    }
}

fn action_space_id(space: &ActionSpace) -> String {
    match space {
        ActionSpace::Discrete(n) => format!("discrete:{n}"),
        ActionSpace::Continuous(d) => format!("continuous:{d}"),
    }
}

/// A static offline dataset of reward-free transitions. Its empirical state
/// distribution plays the role of the sampling distribution rho.
#[derive(Clone, Debug)]
pub struct OfflineDataset {
    pub episodes: Vec<EpisodeData>,
    pub meta: DatasetMeta,
}

/// One reward-labelled trajectory window. The reward is the test task
/// evaluated at the window's final stored Markov state.
#[derive(Clone, Debug)]
pub struct LabelledSample {
    pub trajectory: Trajectory,
    pub reward: f64,
}

/// A minibatch of aligned context windows for TD training. `tau_t` and
/// `tau_next` differ by exactly one (action, observation) step; `tau_future`
/// is an independent draw from the dataset distribution.
#[derive(Clone, Debug)]
pub struct SliceBatch {
    pub tau_t: Vec<Trajectory>,
    /// Encoded action a_t taken at the anchor.
    pub actions: Tensor,
    /// Successor windows at the forward context length.
    pub tau_next: Vec<Trajectory>,
    /// Successor windows at the backward context length.
    pub tau_next_b: Vec<Trajectory>,
    pub tau_future: Vec<Trajectory>,
    /// True Markov states at the anchors.
    pub final_states: Tensor,
}

/// Generates a reward-free dataset. Episodes use independent rng streams
/// (`seed + episode index`), so generation parallelises without changing the
/// result.
pub fn generate_dataset(
    env: &DeskEnv,
    behaviour: BehaviourPolicy,
    occlusion: &OcclusionConfig,
    dynamics: DynamicsConfig,
    episodes: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if episodes == 0 {
        return Err(FbmError::contract("need at least one episode"));
    }
    let spec = env.spec();
    let episode_indices: Vec<usize> = (0..episodes).collect();
    let rolled: Vec<Result<EpisodeData>> = crate::util::parallel_map(episode_indices, |e| {
        roll_episode(env, behaviour, occlusion, dynamics, seed, e as u64)
    });
    let mut eps = Vec::with_capacity(episodes);
    for r in rolled {
        eps.push(r?);
    }
    Ok(OfflineDataset {
        episodes: eps,
        meta: DatasetMeta {
            schema_version: DATASET_SCHEMA_VERSION,
            env_id: env.id().to_string(),
            env_spec_hash: env.spec_hash(),
            occlusion_mode: occlusion.mode.id().to_string(),
            occlusion_sigma: match occlusion.mode {
                OcclusionMode::Noisy { sigma } => sigma,
                _ => 0.0,
            },
            occlusion_p: match occlusion.mode {
                OcclusionMode::Flickering { p } => p,
                _ => 0.0,
            },
            behaviour: behaviour.id().to_string(),
            seed,
            action_space: action_space_id(&spec.action_space),
        },
    })
}

fn roll_episode(
    env: &DeskEnv,
    behaviour: BehaviourPolicy,
    occlusion: &OcclusionConfig,
    dynamics: DynamicsConfig,
    seed: u64,
    episode: u64,
) -> Result<EpisodeData> {
    let spec = env.spec();
    let t_len = spec.episode_length;
    let mut rng = Rng::substream(seed, "episode", episode);
    let mut state = env.reset_with(&mut rng);
    let obs_dim = occlusion.obs_dim(spec.state_dim);

    let mut states = Tensor::zeros(t_len, spec.state_dim);
    let mut observations = Tensor::zeros(t_len, obs_dim);
    let raw_action_dim = match spec.action_space {
        ActionSpace::Discrete(_) => 1,
        ActionSpace::Continuous(d) => d,
    };
    let mut actions = Tensor::zeros(t_len, raw_action_dim);

    // behaviour state for temporally correlated exploration
    let mut ou_state: Vec<f64> = Vec::new();
    let mut sticky_action: Option<usize> = None;
    if let BehaviourPolicy::OuExplore { .. } = behaviour {
        if let ActionSpace::Continuous(d) = spec.action_space {
            ou_state = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        }
    }

    for t in 0..t_len {
        let obs = observe(&state, occlusion, &mut rng);
        let action = match (&behaviour, &spec.action_space) {
            (BehaviourPolicy::UniformRandom, ActionSpace::Discrete(n)) => {
                Action::Discrete(rng.below(*n))
            }
            (BehaviourPolicy::UniformRandom, ActionSpace::Continuous(d)) => Action::Continuous(
                (0..*d).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            ),
            (BehaviourPolicy::OuExplore { .. }, ActionSpace::Discrete(n)) => {
                let a = match sticky_action {
                    Some(prev) if !rng.bernoulli(STICKY_SWITCH_PROB) => prev,
                    _ => rng.below(*n),
                };
                sticky_action = Some(a);
                Action::Discrete(a)
            }
            (BehaviourPolicy::OuExplore { theta, sigma }, ActionSpace::Continuous(_)) => {
                let a: Vec<f64> = ou_state.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
                for v in &mut ou_state {
                    *v += theta * (0.0 - *v) + sigma * rng.normal();
                }
                Action::Continuous(a)
            }
        };

        states.row_mut(t).copy_from_slice(&state.values);
        observations.row_mut(t).copy_from_slice(&obs.values);
        match &action {
            Action::Discrete(a) => actions.set(t, 0, *a as f64),
            Action::Continuous(v) => actions.row_mut(t).copy_from_slice(v),
        }

        let (next, _rewards, _done) = env.step(&state, &action, &dynamics, &mut rng)?;
        state = next;
    }

    Ok(EpisodeData {
        states,
        observations,
        actions,
        dynamics,
    })
}

/// Unions datasets collected from different dynamics instances, keeping each
/// episode's tag. All parts must describe the same environment and occlusion.
pub fn merge_datasets(parts: Vec<OfflineDataset>) -> Result<OfflineDataset> {
    let Some(first) = parts.first() else {
        return Err(FbmError::contract("merge of zero datasets"));
    };
    let mut meta = first.meta.clone();
    let mut episodes = Vec::new();
    for part in &parts {
        if part.meta.env_id != meta.env_id
            || part.meta.occlusion_mode != meta.occlusion_mode
            || part.meta.action_space != meta.action_space
        {
            return Err(FbmError::contract(
                "cannot merge datasets from different environments or occlusions",
            ));
        }
        episodes.extend(part.episodes.iter().cloned());
    }
    meta.behaviour = first.meta.behaviour.clone();
    Ok(OfflineDataset { episodes, meta })
}

impl OfflineDataset {
    /// Total stored (state, action) rows.
    pub fn transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.steps()).sum()
    }

    pub fn state_dim(&self) -> usize {
        self.episodes[0].states.cols()
    }

    pub fn obs_dim(&self) -> usize {
        self.episodes[0].observations.cols()
    }

    /// Encoded-action width used in trajectory windows.
    pub fn encoded_action_dim(&self) -> Result<usize> {
        Ok(self.meta.action_space()?.encoded_dim())
    }

    fn encode_action_row(&self, space: &ActionSpace, episode: usize, t: usize) -> Vec<f64> {
        let raw = self.episodes[episode].actions.row(t);
        match space {
            ActionSpace::Discrete(n) => {
                let mut v = vec![0.0; *n];
                v[raw[0] as usize] = 1.0;
                v
            }
            ActionSpace::Continuous(_) => raw.to_vec(),
        }
    }

    /// The trajectory window of length `l` ending at step `t` of an episode:
    /// slot j holds (action before obs, obs) at time t - l + 1 + j, zero-padded
    /// where the window precedes the episode start. Never crosses an episode
    /// boundary.
    pub fn window(&self, episode: usize, t: usize, l: usize) -> Result<Trajectory> {
        if l == 0 {
            return Err(FbmError::contract("window length must be at least 1"));
        }
        let ep = &self.episodes[episode];
        if t >= ep.steps() {
            return Err(FbmError::contract(format!(
                "window anchor {t} out of range for episode of {} steps",
                ep.steps()
            )));
        }
        let space = self.meta.action_space()?;
        let act_dim = space.encoded_dim();
        let obs_dim = self.obs_dim();
        let mut actions = Tensor::zeros(l, act_dim);
        let mut observations = Tensor::zeros(l, obs_dim);
        let mut valid = vec![false; l];
        for j in 0..l {
            let u = t as isize - l as isize + 1 + j as isize;
            if u < 0 {
                continue;
            }
            let u = u as usize;
            valid[j] = true;
            observations
                .row_mut(j)
                .copy_from_slice(ep.observations.row(u));
            if u >= 1 {
                let enc = self.encode_action_row(&space, episode, u - 1);
                actions.row_mut(j).copy_from_slice(&enc);
            }
        }
        let terminal = MarkovState::new(ep.states.row(t).to_vec());
        Trajectory::new(actions, observations, valid, Some(terminal))
    }

    /// Number of valid TD anchors (steps with a stored successor).
    pub fn td_anchor_count(&self) -> usize {
        self.episodes
            .iter()
            .map(|e| e.steps().saturating_sub(1))
            .sum()
    }

    fn nth_td_anchor(&self, mut i: usize) -> (usize, usize) {
        for (e, ep) in self.episodes.iter().enumerate() {
            let c = ep.steps().saturating_sub(1);
            if i < c {
                return (e, i);
            }
            i -= c;
        }
        panic!("anchor index out of range");
    }

    fn nth_row(&self, mut i: usize) -> (usize, usize) {
        for (e, ep) in self.episodes.iter().enumerate() {
            if i < ep.steps() {
                return (e, i);
            }
            i -= ep.steps();
        }
        panic!("row index out of range");
    }

    /// Samples a TD minibatch: anchors uniform over all valid (episode, t)
    /// pairs, future windows drawn independently and uniformly over all rows.
    pub fn sample_slices(
        &self,
        batch: usize,
        l_forward: usize,
        l_backward: usize,
        rng: &mut Rng,
    ) -> Result<SliceBatch> {
        if self.episodes.is_empty() || self.td_anchor_count() == 0 {
            return Err(FbmError::contract("dataset has no usable transitions"));
        }
        if batch == 0 {
            return Err(FbmError::contract("batch size must be positive"));
        }
        let space = self.meta.action_space()?;
        let act_dim = space.encoded_dim();
        let n_anchors = self.td_anchor_count();
        let n_rows = self.transitions();
        let sd = self.state_dim();

        let mut tau_t = Vec::with_capacity(batch);
        let mut tau_next = Vec::with_capacity(batch);
        let mut tau_next_b = Vec::with_capacity(batch);
        let mut tau_future = Vec::with_capacity(batch);
        let mut actions = Tensor::zeros(batch, act_dim);
        let mut final_states = Tensor::zeros(batch, sd);

        for i in 0..batch {
            let (e, t) = self.nth_td_anchor(rng.below(n_anchors));
            tau_t.push(self.window(e, t, l_forward)?);
            tau_next.push(self.window(e, t + 1, l_forward)?);
            tau_next_b.push(self.window(e, t + 1, l_backward)?);
            let enc = self.encode_action_row(&space, e, t);
            actions.row_mut(i).copy_from_slice(&enc);
            final_states
                .row_mut(i)
                .copy_from_slice(self.episodes[e].states.row(t));

            let (fe, ft) = self.nth_row(rng.below(n_rows));
            tau_future.push(self.window(fe, ft, l_backward)?);
        }
        Ok(SliceBatch {
            tau_t,
            actions,
            tau_next,
            tau_next_b,
            tau_future,
            final_states,
        })
    }

    /// k uniformly sampled windows, each labelled with the task reward at its
    /// final stored Markov state.
    pub fn build_labelled_set(
        &self,
        task: &TaskReward,
        k: usize,
        l: usize,
        rng: &mut Rng,
    ) -> Result<Vec<LabelledSample>> {
        if k == 0 {
            return Err(FbmError::contract("labelled set size must be positive"));
        }
        let total = self.transitions();
        if k > total {
            return Err(FbmError::contract(format!(
                "labelled set of {k} exceeds the {total} stored transitions"
            )));
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let (e, t) = self.nth_row(rng.below(total));
            let trajectory = self.window(e, t, l)?;
            let state = MarkovState::new(self.episodes[e].states.row(t).to_vec());
            out.push(LabelledSample {
                trajectory,
                reward: task.reward(&state),
            });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct EpisodeJson {
            steps: usize,
            state_dim: usize,
            obs_dim: usize,
            action_dim: usize,
            mass_scale: f64,
            damping_scale: f64,
        }
        #[derive(Serialize)]
        struct Header<'a> {
            meta: &'a DatasetMeta,
            episodes: Vec<EpisodeJson>,
        }
        let header = Header {
            meta: &self.meta,
            episodes: self
                .episodes
                .iter()
                .map(|e| EpisodeJson {
                    steps: e.steps(),
                    state_dim: e.states.cols(),
                    obs_dim: e.observations.cols(),
                    action_dim: e.actions.cols(),
                    mass_scale: e.dynamics.mass_scale,
                    damping_scale: e.dynamics.damping_scale,
                })
                .collect(),
        };
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for e in &self.episodes {
            for block in [&e.states, &e.observations, &e.actions] {
                for v in block.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<OfflineDataset> {
        #[derive(Deserialize)]
        struct EpisodeJson {
            steps: usize,
            state_dim: usize,
            obs_dim: usize,
            action_dim: usize,
            mass_scale: f64,
            damping_scale: f64,
        }
        #[derive(Deserialize)]
        struct Header {
            meta: DatasetMeta,
            episodes: Vec<EpisodeJson>,
        }
        let mut file = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| FbmError::Format("dataset file has no header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..newline])?;
        if header.meta.schema_version != DATASET_SCHEMA_VERSION {
            return Err(FbmError::Format(format!(
                "unsupported dataset schema version {}",
                header.meta.schema_version
            )));
        }
        let mut at = newline + 1;
        let mut read_block = |rows: usize, cols: usize| -> Result<Tensor> {
            let n = rows * cols;
            let end = at + n * 8;
            if end > bytes.len() {
                return Err(FbmError::Format("dataset file truncated".into()));
            }
            let mut data = Vec::with_capacity(n);
            for chunk in bytes[at..end].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            at = end;
            Ok(Tensor::from_vec(rows, cols, data))
        };
        let mut episodes = Vec::with_capacity(header.episodes.len());
        for e in &header.episodes {
            let states = read_block(e.steps, e.state_dim)?;
            let observations = read_block(e.steps, e.obs_dim)?;
            let actions = read_block(e.steps, e.action_dim)?;
            episodes.push(EpisodeData {
                states,
                observations,
                actions,
                dynamics: DynamicsConfig::new(e.mass_scale, e.damping_scale)
                    .map_err(|e| FbmError::Format(e.to_string()))?,
            });
        }
        Ok(OfflineDataset {
            episodes,
            meta: header.meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::{Gridworld, PointMass};

    fn small_grid_dataset(episodes: usize, seed: u64) -> OfflineDataset {
        let env = DeskEnv::Grid(Gridworld::desk_default());
        generate_dataset(
            &env,
            BehaviourPolicy::UniformRandom,
            &OcclusionConfig::fully_observed(),
            DynamicsConfig::base(),
            episodes,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn one_episode_has_episode_length_transitions() {
        let ds = small_grid_dataset(1, 0);
        assert_eq!(ds.transitions(), 200);
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let dir = std::env::temp_dir().join("fbm_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.fbds");
        let p2 = dir.join("b.fbds");
        small_grid_dataset(3, 42).save(&p1).unwrap();
        small_grid_dataset(3, 42).save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_file(&p1).ok();
        std::fs::remove_file(&p2).ok();
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let dir = std::env::temp_dir().join("fbm_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.fbds");
        let ds = small_grid_dataset(2, 7);
        ds.save(&path).unwrap();
        let loaded = OfflineDataset::load(&path).unwrap();
        assert_eq!(loaded.meta, ds.meta);
        for (a, b) in loaded.episodes.iter().zip(&ds.episodes) {
            assert_eq!(a.states, b.states);
            assert_eq!(a.observations, b.observations);
            assert_eq!(a.actions, b.actions);
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn gridworld_coverage_under_uniform_random() {
        let ds = small_grid_dataset(50, 3);
        let mut seen = vec![false; 49];
        for e in &ds.episodes {
            for t in 0..e.steps() {
                let row = e.states.row(t);
                seen[(row[0] as usize) * 7 + row[1] as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "some states were never visited");
    }

    #[test]
    fn anchor_at_zero_has_one_valid_slot() {
        let ds = small_grid_dataset(1, 1);
        let w = ds.window(0, 0, 8).unwrap();
        assert_eq!(w.valid_count(), 1);
        // the single valid slot has a zero action (no action precedes o_0)
        assert!(w.actions().row(7).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slices_differ_by_exactly_one_step() {
        let ds = small_grid_dataset(2, 5);
        let mut rng = Rng::from_seed(9);
        let batch = ds.sample_slices(16, 6, 4, &mut rng).unwrap();
        for (a, b) in batch.tau_t.iter().zip(&batch.tau_next) {
            // tau_next is shifted by one: its slots 0..L-2 equal slots 1..L-1 of tau_t
            for j in 0..5 {
                assert_eq!(a.observations().row(j + 1), b.observations().row(j));
                assert_eq!(a.actions().row(j + 1), b.actions().row(j));
            }
        }
    }

    #[test]
    fn anchor_frequencies_match_episode_proportions() {
        // two episodes of equal length: each should receive about half the anchors
        let ds = small_grid_dataset(2, 11);
        let mut rng = Rng::from_seed(2);
        let n = 20_000;
        let mut first = 0usize;
        for _ in 0..n / 16 {
            let batch = ds.sample_slices(16, 4, 4, &mut rng).unwrap();
            for tr in &batch.tau_t {
                // episode 0 has states with the fingerprint of its own rng; instead
                // count via terminal state equality against both episode stores
                let term = &tr.terminal_state().unwrap().values;
                let e0 = &ds.episodes[0];
                let hit0 = (0..e0.steps()).any(|t| e0.states.row(t) == term.as_slice());
                if hit0 {
                    first += 1;
                }
            }
        }
        let rate = first as f64 / n as f64;
        // states repeat across episodes so this is a loose sanity check
        assert!(rate > 0.3 && rate < 1.0, "rate {rate}");
    }

    #[test]
    fn labels_match_direct_reward_evaluation() {
        let env = DeskEnv::Point(PointMass::desk_default());
        let ds = generate_dataset(
            &env,
            BehaviourPolicy::ou_default(),
            &OcclusionConfig::fully_observed(),
            DynamicsConfig::base(),
            3,
            13,
        )
        .unwrap();
        let task = &env.tasks()[4]; // vel_px, dense
        let mut rng = Rng::from_seed(4);
        let labelled = ds.build_labelled_set(task, 64, 4, &mut rng).unwrap();
        for s in &labelled {
            let direct = task.reward(s.trajectory.terminal_state().unwrap());
            assert_eq!(s.reward, direct);
        }
    }

    #[test]
    fn unreachable_goal_labels_are_zero() {
        let env = DeskEnv::Point(PointMass::desk_default());
        let ds = generate_dataset(
            &env,
            BehaviourPolicy::UniformRandom,
            &OcclusionConfig::fully_observed(),
            DynamicsConfig::base(),
            1,
            2,
        )
        .unwrap();
        let unreachable = TaskReward::goal("nowhere", vec![50.0, 50.0], 0.01);
        let mut rng = Rng::from_seed(0);
        let labelled = ds.build_labelled_set(&unreachable, 32, 4, &mut rng).unwrap();
        assert!(labelled.iter().all(|s| s.reward == 0.0));
    }

    #[test]
    fn windows_never_cross_episode_boundaries() {
        let ds = small_grid_dataset(3, 17);
        let mut rng = Rng::from_seed(1);
        for _ in 0..200 {
            let batch = ds.sample_slices(8, 8, 8, &mut rng).unwrap();
            for tr in batch.tau_t.iter().chain(&batch.tau_future) {
                // padded slots are exactly zero: enforced by construction, spot
                // check that the valid prefix rule held
                let first_valid = tr.valid().iter().position(|&v| v).unwrap();
                for j in 0..first_valid {
                    assert!(tr.observations().row(j).iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn merge_keeps_per_episode_dynamics_tags() {
        let env = DeskEnv::Point(PointMass::desk_default());
        let make = |scale: f64, seed: u64| {
            generate_dataset(
                &env,
                BehaviourPolicy::ou_default(),
                &OcclusionConfig::fully_observed(),
                DynamicsConfig::scaled(scale).unwrap(),
                2,
                seed,
            )
            .unwrap()
        };
        let merged = merge_datasets(vec![make(0.5, 1), make(1.5, 2)]).unwrap();
        assert_eq!(merged.episodes.len(), 4);
        assert_eq!(merged.episodes[0].dynamics.mass_scale, 0.5);
        assert_eq!(merged.episodes[2].dynamics.mass_scale, 1.5);
    }
}
