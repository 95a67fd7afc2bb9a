//! The behaviour-foundation-model family.
//!
//! Forward-backward representations factorize the successor measure as
//! M ~ F^T B rho. `F` predicts long-run dynamics under the task-conditioned
//! policy, `B` maps states (or trajectory windows, in the memory variant) to
//! task space, and a policy family is trained greedily against the critic
//! Q = F^T z. Tasks are identified by vectors z on the sqrt(d)-radius
//! hypersphere during training and inferred from reward-labelled data at test
//! time. The universal-successor-feature variant swaps F^T B for psi with
//! frozen random features phi and ridge-regression task inference.

mod model;
pub mod tabular;

pub use model::{
    ridge_regression, wiring_for, Consumer, FbModel, ModelConfig, RolloutPolicy, UsfModel,
    UsfRolloutPolicy, Variant, Wiring, FB_TARGET_PREFIXES, USF_TARGET_PREFIXES,
};

use crate::autodiff::{BoundParams, Graph, ParamSet, Tensor, Var};
use crate::data::{LabelledSample, SliceBatch};
use crate::envgen::{Action, ActionSpace};
use crate::error::{FbmError, Result};
use crate::memory::Trajectory;
use crate::rng::Rng;

/// Where a task embedding came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZSource {
    PriorUniform,
    PriorBackward,
    Inferred,
}

/// A task embedding. Prior draws always lie on the sqrt(d) hypersphere;
/// inferred embeddings are used as-is without re-normalization.
#[derive(Clone, Debug)]
pub struct LatentTask {
    pub z: Vec<f64>,
    pub source: ZSource,
}

impl LatentTask {
    pub fn new(z: Vec<f64>, source: ZSource) -> Result<Self> {
        if matches!(source, ZSource::PriorUniform | ZSource::PriorBackward) {
            let d = z.len() as f64;
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - d.sqrt()).abs() > 1e-9 {
                return Err(FbmError::contract(format!(
                    "prior z must have norm sqrt(d) = {}, got {norm}",
                    d.sqrt()
                )));
            }
        }
        Ok(LatentTask { z, source })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// Stacks a batch of embeddings into an N x d tensor.
pub fn z_batch_tensor(batch: &[LatentTask]) -> Tensor {
    let d = batch[0].dim();
    Tensor::from_fn(batch.len(), d, |r, c| batch[r].z[c])
}

/// Draws a batch of training task embeddings: with probability `mix_ratio` a
/// uniform point on the sqrt(d) hypersphere, otherwise a backward-model output
/// of a dataset sample (already sqrt(d)-normalized).
pub fn sample_z(
    rng: &mut Rng,
    batch: usize,
    d: usize,
    backward_outputs: Option<&Tensor>,
    mix_ratio: f64,
) -> Result<Vec<LatentTask>> {
    if !(0.0..=1.0).contains(&mix_ratio) {
        return Err(FbmError::contract(format!(
            "mix ratio must lie in [0, 1], got {mix_ratio}"
        )));
    }
    if mix_ratio < 1.0 {
        match backward_outputs {
            Some(b) if b.rows() > 0 && b.cols() == d => {}
            Some(b) => {
                return Err(FbmError::contract(format!(
                    "backward outputs have shape {}x{}, expected kx{d} with k > 0",
                    b.rows(),
                    b.cols()
                )))
            }
            None => {
                return Err(FbmError::contract(
                    "backward outputs required when mix_ratio < 1",
                ))
            }
        }
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        if rng.bernoulli(mix_ratio) {
            out.push(LatentTask::new(
                rng.sphere_point(d, (d as f64).sqrt()),
                ZSource::PriorUniform,
            )?);
        } else {
            let b = backward_outputs.unwrap();
            let row = b.row(rng.below(b.rows())).to_vec();
            out.push(LatentTask::new(row, ZSource::PriorBackward)?);
        }
    }
    Ok(out)
}

/// One member of the model family behind a uniform training and evaluation
/// surface. Built from a [`ModelConfig`] whose variant and routing decide the
/// encoder wiring.
pub enum BfmModel {
    Fb(FbModel),
    Usf(UsfModel),
}

impl BfmModel {
    /// Builds the requested variant with wired encoders.
    pub fn build(cfg: ModelConfig) -> Result<BfmModel> {
        match cfg.variant {
            Variant::Fb | Variant::FbM | Variant::FbStack => Ok(BfmModel::Fb(FbModel::init(cfg)?)),
            Variant::UsfM => Ok(BfmModel::Usf(UsfModel::init(cfg)?)),
        }
    }

    pub fn cfg(&self) -> &ModelConfig {
        match self {
            BfmModel::Fb(m) => &m.cfg,
            BfmModel::Usf(m) => &m.cfg,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            BfmModel::Fb(m) => &m.params,
            BfmModel::Usf(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            BfmModel::Fb(m) => &mut m.params,
            BfmModel::Usf(m) => &mut m.params,
        }
    }

    pub fn targets(&self) -> &ParamSet {
        match self {
            BfmModel::Fb(m) => &m.targets,
            BfmModel::Usf(m) => &m.targets,
        }
    }

    pub fn targets_mut(&mut self) -> &mut ParamSet {
        match self {
            BfmModel::Fb(m) => &mut m.targets,
            BfmModel::Usf(m) => &mut m.targets,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.cfg().action_space, ActionSpace::Continuous(_))
    }

    /// Name filter for parameters the critic update trains.
    pub fn critic_param(&self, name: &str) -> bool {
        match self {
            BfmModel::Fb(_) => name.starts_with("f.") || name.starts_with("b."),
            BfmModel::Usf(_) => name.starts_with("psi."),
        }
    }

    /// Name filter for parameters the actor update trains.
    pub fn actor_param(&self, name: &str) -> bool {
        name.starts_with("pi.")
    }

    /// Rows used as biased z samples: backward-model outputs for FB, feature
    /// rows re-normalized to the sqrt(d) sphere for USF.
    pub fn z_source_rows(&self, trajectories: &[Trajectory]) -> Result<Tensor> {
        match self {
            BfmModel::Fb(m) => m.backward_outputs(trajectories),
            BfmModel::Usf(m) => {
                let mut rows = m.feature_rows(trajectories)?;
                let target = (m.cfg.d as f64).sqrt();
                for r in 0..rows.rows() {
                    let norm = (rows.row(r).iter().map(|v| v * v).sum::<f64>() + 1e-24).sqrt();
                    for v in rows.row_mut(r) {
                        *v *= target / norm;
                    }
                }
                Ok(rows)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn critic_loss(
        &self,
        g: &mut Graph,
        online: &BoundParams,
        target: &BoundParams,
        slice: &SliceBatch,
        z: &Tensor,
        smoothing: Option<(f64, f64)>,
        rng: &mut Rng,
    ) -> Result<Var> {
        match self {
            BfmModel::Fb(m) => m.fb_td_loss(g, online, target, slice, z, smoothing, rng),
            BfmModel::Usf(m) => m.usf_td_loss(g, online, target, slice, z, smoothing, rng),
        }
    }

    pub fn policy_loss(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        tau: &[Trajectory],
        z: &Tensor,
    ) -> Result<Var> {
        match self {
            BfmModel::Fb(m) => m.policy_loss(g, bp, tau, z),
            BfmModel::Usf(m) => m.policy_loss(g, bp, tau, z),
        }
    }

    pub fn target_prefixes(&self) -> &'static [&'static str] {
        match self {
            BfmModel::Fb(_) => &FB_TARGET_PREFIXES,
            BfmModel::Usf(_) => &USF_TARGET_PREFIXES,
        }
    }

    pub fn infer_task(&self, labelled: &[LabelledSample]) -> Result<LatentTask> {
        match self {
            BfmModel::Fb(m) => m.infer_task(labelled),
            BfmModel::Usf(m) => m.infer_task(labelled),
        }
    }

    pub fn rollout_agent(&self, z: &LatentTask) -> RolloutAgent<'_> {
        match self {
            BfmModel::Fb(m) => RolloutAgent::Fb(m.rollout_policy(z)),
            BfmModel::Usf(m) => RolloutAgent::Usf(m.rollout_policy(z)),
        }
    }

    pub fn save(&self, path: &std::path::Path, step: u64) -> Result<()> {
        match self {
            BfmModel::Fb(m) => m.save(path, step),
            BfmModel::Usf(m) => m.save(path, step),
        }
    }

    pub fn load(path: &std::path::Path) -> Result<(BfmModel, u64)> {
        let (_, hyper, _) = crate::autodiff::checkpoint::load(path)?;
        match hyper["kind"].as_str() {
            Some("fb") => {
                let (m, step) = FbModel::load(path)?;
                Ok((BfmModel::Fb(m), step))
            }
            Some("usf") => {
                let (m, step) = UsfModel::load(path)?;
                Ok((BfmModel::Usf(m), step))
            }
            other => Err(FbmError::Format(format!(
                "checkpoint kind {other:?} is not a model checkpoint"
            ))),
        }
    }
}

/// Streaming per-episode action selection for either model kind.
pub enum RolloutAgent<'m> {
    Fb(RolloutPolicy<'m>),
    Usf(UsfRolloutPolicy<'m>),
}

impl RolloutAgent<'_> {
    pub fn act(&mut self, obs: &[f64], state: &[f64]) -> Result<Action> {
        match self {
            RolloutAgent::Fb(p) => p.act(obs, state),
            RolloutAgent::Usf(p) => p.act(obs, state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_samples_lie_on_the_sphere() {
        let mut rng = Rng::from_seed(0);
        let d = 50;
        let zs = sample_z(&mut rng, 200, d, None, 1.0).unwrap();
        for t in &zs {
            let norm = t.z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - (d as f64).sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_sphere_mean_is_near_zero() {
        let mut rng = Rng::from_seed(5);
        let d = 16;
        let n = 100_000;
        let mut mean = vec![0.0; d];
        for _ in 0..n {
            let p = rng.sphere_point(d, (d as f64).sqrt());
            for (m, v) in mean.iter_mut().zip(&p) {
                *m += v / n as f64;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 0.05 * (d as f64).sqrt(), "mean norm {norm}");
    }

    #[test]
    fn backward_mixing_draws_rows() {
        let mut rng = Rng::from_seed(2);
        let d = 4;
        let row = rng.sphere_point(d, 2.0);
        let b = Tensor::from_fn(3, d, |_, c| row[c]);
        let zs = sample_z(&mut rng, 50, d, Some(&b), 0.0).unwrap();
        for t in &zs {
            assert_eq!(t.source, ZSource::PriorBackward);
            assert_eq!(t.z, row);
        }
    }

    #[test]
    fn missing_backward_outputs_is_an_error() {
        let mut rng = Rng::from_seed(2);
        assert!(sample_z(&mut rng, 10, 4, None, 0.5).is_err());
    }
}
