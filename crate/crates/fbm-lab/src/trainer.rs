//! The actor-critic training loop: batch sampling, z mixing, critic and actor
//! updates, Polyak targets, policy smoothing, metrics, and checkpointing.
//!
//! Fully deterministic given the seed: every consumer of randomness draws from
//! its own named stream, the step loop is single-threaded, and reruns produce
//! bit-identical metrics and checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autodiff::{Adam, Graph, ParamSet, Tensor};
use crate::bfm::{sample_z, z_batch_tensor, BfmModel};
use crate::data::OfflineDataset;
use crate::error::{FbmError, Result};
use crate::rng::Rng;

/// Training-loop hyperparameters. Defaults follow the full-size protocol
/// (Adam at 1e-4, discount 0.98, Polyak 0.01, smoothing std 0.2 truncated at
/// 0.3, z mix 0.5); the desk preset shrinks steps and batch so a full run
/// fits in CI.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub gamma: f64,
    pub polyak_tau: f64,
    pub smooth_std: f64,
    pub smooth_clip: f64,
    pub z_mix: f64,
    pub checkpoint_every: u64,
    pub metrics_every: u64,
    pub seed: u64,
    pub paper_scale: bool,
}

impl TrainConfig {
    /// Desk defaults: 30k steps, batch 128, checkpoints every 2k steps.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            learning_steps: 30_000,
            batch: 128,
            lr: 1e-4,
            gamma: 0.98,
            polyak_tau: 0.01,
            smooth_std: 0.2,
            smooth_clip: 0.3,
            z_mix: 0.5,
            checkpoint_every: 2_000,
            metrics_every: 100,
            seed,
            paper_scale: false,
        }
    }

    /// Full-size protocol: 1M steps, batch 512, checkpoints every 20k steps.
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            learning_steps: 1_000_000,
            batch: 512,
            checkpoint_every: 20_000,
            paper_scale: true,
            ..TrainConfig::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.polyak_tau && self.polyak_tau <= 1.0) {
            return Err(FbmError::contract(format!(
                "polyak tau must lie in (0, 1], got {}",
                self.polyak_tau
            )));
        }
        if self.smooth_std < 0.0 {
            return Err(FbmError::contract("smoothing std must be non-negative"));
        }
        if self.smooth_clip <= 0.0 {
            return Err(FbmError::contract("smoothing clip must be positive"));
        }
        if !(0.0..=1.0).contains(&self.z_mix) {
            return Err(FbmError::contract("z mix must lie in [0, 1]"));
        }
        if self.batch < 2 {
            return Err(FbmError::contract("batch must be at least 2"));
        }
        Ok(())
    }
}

/// theta_bar <- (1 - tau) theta_bar + tau theta, matched by name.
pub fn polyak_update(targets: &mut ParamSet, online: &ParamSet, tau: f64) -> Result<()> {
    let names: Vec<String> = targets.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let src = online.tensor(&name);
        let dst = targets.tensor(&name);
        if src.shape() != dst.shape() {
            return Err(FbmError::contract(format!(
                "polyak shape mismatch for '{name}': {:?} vs {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        let mixed = Tensor::from_vec(
            dst.rows(),
            dst.cols(),
            dst.data()
                .iter()
                .zip(src.data())
                .map(|(t, o)| (1.0 - tau) * t + tau * o)
                .collect(),
        );
        targets.set_tensor(&name, mixed);
    }
    Ok(())
}

/// Adds truncated Gaussian noise to actions: a + clip(N(0, sigma^2), -c, c),
/// then clips to [-1, 1]. Used inside critic targets and exploration, never at
/// deterministic evaluation.
pub fn smoothed_action(actions: &Tensor, rng: &mut Rng, sigma: f64, clip: f64) -> Tensor {
    actions.map(|a| {
        let noise = (rng.normal() * sigma).clamp(-clip, clip);
        (a + noise).clamp(-1.0, 1.0)
    })
}

/// Artifacts produced by one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<(u64, PathBuf)>,
    pub final_critic_loss: f64,
}

fn grad_norm(grads: &std::collections::BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(|g| g.sq_norm()).sum::<f64>().sqrt()
}

fn fmt(v: f64) -> String {
    format!("{v:.9e}")
}

/// Runs the training loop, writing `metrics.csv` and `ckpt_*.fbck` files under
/// `out_dir`. The model is updated in place; the final checkpoint is always
/// written.
pub fn train(
    model: &mut BfmModel,
    dataset: &OfflineDataset,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(
        metrics,
        "step,critic_loss,actor_loss,critic_grad_norm,actor_grad_norm"
    )?;

    let (l_forward, l_backward, d) = {
        let c = model.cfg();
        (c.l_forward, c.l_backward, c.d)
    };
    let mut data_rng = Rng::stream(cfg.seed, "train_data");
    let mut z_rng = Rng::stream(cfg.seed, "train_z");
    let mut smooth_rng = Rng::stream(cfg.seed, "train_smooth");
    let mut adam_critic = Adam::new(cfg.lr);
    let mut adam_actor = Adam::new(cfg.lr);
    let mut checkpoints = Vec::new();
    let mut last_critic_loss = f64::NAN;
    let smoothing = if cfg.smooth_std > 0.0 {
        Some((cfg.smooth_std, cfg.smooth_clip))
    } else {
        None
    };

    for step in 1..=cfg.learning_steps {
        let slice = dataset.sample_slices(cfg.batch, l_forward, l_backward, &mut data_rng)?;
        let z_rows = if cfg.z_mix < 1.0 {
            Some(model.z_source_rows(&slice.tau_future)?)
        } else {
            None
        };
        let zs = sample_z(&mut z_rng, cfg.batch, d, z_rows.as_ref(), cfg.z_mix)?;
        let z = z_batch_tensor(&zs);

        // critic update
        let (critic_loss, critic_gnorm) = {
            let mut g = Graph::new();
            let online = model.params().bind(&mut g, &|n| model.critic_param(n));
            let target = model.targets().bind_frozen(&mut g);
            let loss = model.critic_loss(
                &mut g,
                &online,
                &target,
                &slice,
                &z,
                smoothing,
                &mut smooth_rng,
            )?;
            let loss_v = g.value(loss).item();
            if !loss_v.is_finite() {
                return Err(FbmError::Diverged {
                    step,
                    quantity: "critic loss".to_string(),
                });
            }
            let grads = g.backward(loss)?;
            let gmap = online.collect_grads(&grads);
            let gnorm = grad_norm(&gmap);
            adam_critic.step(model.params_mut(), &gmap);
            (loss_v, gnorm)
        };
        last_critic_loss = critic_loss;

        // actor update on fresh z samples (continuous spaces only)
        let (actor_loss, actor_gnorm) = if model.is_continuous() {
            let zs2 = sample_z(&mut z_rng, cfg.batch, d, z_rows.as_ref(), cfg.z_mix)?;
            let z2 = z_batch_tensor(&zs2);
            let mut g = Graph::new();
            let bound = model.params().bind(&mut g, &|n| model.actor_param(n));
            let loss = model.policy_loss(&mut g, &bound, &slice.tau_t, &z2)?;
            let loss_v = g.value(loss).item();
            if !loss_v.is_finite() {
                return Err(FbmError::Diverged {
                    step,
                    quantity: "actor loss".to_string(),
                });
            }
            let grads = g.backward(loss)?;
            let gmap = bound.collect_grads(&grads);
            let gnorm = grad_norm(&gmap);
            adam_actor.step(model.params_mut(), &gmap);
            (loss_v, gnorm)
        } else {
            (0.0, 0.0)
        };

        // target tracking
        {
            let (params, targets) = match model {
                BfmModel::Fb(m) => (&m.params, &mut m.targets),
                BfmModel::Usf(m) => (&m.params, &mut m.targets),
            };
            polyak_update(targets, params, cfg.polyak_tau)?;
        }

        if step % cfg.metrics_every == 0 || step == cfg.learning_steps {
            writeln!(
                metrics,
                "{step},{},{},{},{}",
                fmt(critic_loss),
                fmt(actor_loss),
                fmt(critic_gnorm),
                fmt(actor_gnorm)
            )?;
        }
        if step % cfg.checkpoint_every == 0 || step == cfg.learning_steps {
            let path = out_dir.join(format!("ckpt_{step:08}.fbck"));
            model.save(&path, step)?;
            if checkpoints.last().map(|(s, _): &(u64, PathBuf)| *s) != Some(step) {
                checkpoints.push((step, path));
            }
        }
    }
    metrics.flush()?;
    Ok(TrainOutcome {
        metrics_path,
        checkpoints,
        final_critic_loss: last_critic_loss,
    })
}
