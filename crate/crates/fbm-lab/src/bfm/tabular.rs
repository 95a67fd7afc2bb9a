//! Tabular forward-backward representations on finite MDPs.
//!
//! The desk environments are small enough to train FB with exact
//! expectations instead of sampled minibatches: the TD loss is evaluated over
//! every (state, action, next-state) triple at once, which makes convergence
//! to the exact successor measure testable. Two flavours:
//!
//! - [`TabularFb`]: a fixed evaluation policy, plain F and B tables. Its
//!   converged F B^T rho is compared against the exact successor measure.
//! - [`TabularZFb`]: task-conditioned F(s, a, z) = W_{sa} z, linear in z, with
//!   greedy policy improvement inside the TD target. Q(s, a, z) = F^T z is
//!   then scale-invariant in z, so goal embeddings (which are much shorter
//!   than prior samples) rank actions identically to their rescaled versions.

use serde_json::json;

use crate::autodiff::{checkpoint, Adam, Graph, ParamSet, Tensor, Var};
use crate::error::{FbmError, Result};
use crate::oracle::FiniteMdp;
use crate::rng::Rng;
use crate::trainer::polyak_update;

#[derive(Clone, Debug)]
pub struct TabularFbConfig {
    pub d: usize,
    pub lr: f64,
    pub steps: u64,
    pub polyak_tau: f64,
    pub lambda_orth: f64,
    /// z draws per step (task-conditioned training only).
    pub z_batch: usize,
    /// Probability of a uniform-sphere z versus a backward-model row.
    pub z_mix: f64,
    pub seed: u64,
}

impl TabularFbConfig {
    pub fn new(d: usize, seed: u64) -> Self {
        TabularFbConfig {
            d,
            lr: 3e-3,
            steps: 3_000,
            polyak_tau: 0.05,
            lambda_orth: 1.0,
            z_batch: 8,
            z_mix: 0.5,
            seed,
        }
    }
}

fn transition_tensor(mdp: &FiniteMdp) -> Tensor {
    let (s, a) = (mdp.n_states, mdp.n_actions);
    Tensor::from_fn(s * a, s, |row, col| mdp.row(row / a, row % a)[col])
}

fn policy_selector(mdp: &FiniteMdp, policy: &[f64]) -> Tensor {
    // (S x S*A) matrix averaging F-rows under the policy
    let (s, a) = (mdp.n_states, mdp.n_actions);
    Tensor::from_fn(s, s * a, |st, col| {
        if col / a == st {
            policy[st * a + col % a]
        } else {
            0.0
        }
    })
}

fn init_table(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.normal() * scale)
}

/// Fixed-policy tabular FB: learns F (S*A x d) and B (S x d) so that
/// F B^T rho reproduces the successor measure of the given policy.
pub struct TabularFb {
    pub d: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub params: ParamSet,
    pub targets: ParamSet,
}

impl TabularFb {
    pub fn init(mdp: &FiniteMdp, d: usize, seed: u64) -> Result<TabularFb> {
        let mut rng = Rng::stream(seed, "tabular_fb_init");
        let mut params = ParamSet::new();
        params.add("f", init_table(&mut rng, mdp.n_states * mdp.n_actions, d, 0.1))?;
        params.add("b_raw", init_table(&mut rng, mdp.n_states, d, 0.5))?;
        let targets = params.clone_subset_frozen(&["f", "b_raw"]);
        Ok(TabularFb {
            d,
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            gamma: mdp.gamma,
            params,
            targets,
        })
    }

    /// Exact-expectation TD training against a fixed stochastic policy.
    /// Returns the loss trace (one value per step).
    pub fn train(
        &mut self,
        mdp: &FiniteMdp,
        policy: &[f64],
        cfg: &TabularFbConfig,
    ) -> Result<Vec<f64>> {
        let p = transition_tensor(mdp);
        let selector = policy_selector(mdp, policy);
        let sqrt_d = (self.d as f64).sqrt();
        let mut adam = Adam::new(cfg.lr);
        let mut trace = Vec::with_capacity(cfg.steps as usize);
        for step in 1..=cfg.steps {
            let loss_v;
            {
                let mut g = Graph::new();
                let online = self.params.bind_all(&mut g);
                let target = self.targets.bind_frozen(&mut g);
                let p_c = g.constant(p.clone());
                let sel_c = g.constant(selector.clone());

                let f = online.var("f");
                let b = {
                    let raw = online.var("b_raw");
                    g.row_l2_normalize(raw, sqrt_d)
                };
                let f_bar = target.var("f");
                let b_bar = {
                    let raw = target.var("b_raw");
                    g.row_l2_normalize(raw, sqrt_d)
                };
                let b_bar_t = g.transpose(b_bar);

                // target: gamma * P F_pi_bar B_bar^T
                let f_pi = g.matmul(sel_c, f_bar);
                let exp_next = g.matmul(p_c, f_pi);
                let m_target_raw = g.matmul(exp_next, b_bar_t);
                let m_target = g.scale(m_target_raw, self.gamma);
                let m_online = g.matmul(f, b_bar_t);
                let diff = g.sub(m_online, m_target);
                let sq = g.square(diff);
                let quad = g.mean_all(sq);

                // -2 E_{s+ ~ P}[F^T B(s+)]
                let b_t = g.transpose(b);
                let fb = g.matmul(f, b_t);
                let weighted = g.mul(p_c, fb);
                let rows = g.row_sum(weighted);
                let align_mean = g.mean_all(rows);
                let align = g.scale(align_mean, -2.0);

                // covariance toward identity
                let cov_raw = g.matmul(b_t, b);
                let cov = g.scale(cov_raw, 1.0 / self.n_states as f64);
                let eye = g.constant(Tensor::identity(self.d));
                let cov_err = g.sub(cov, eye);
                let cov_sq = g.square(cov_err);
                let cov_sum = g.sum_all(cov_sq);
                let reg = g.scale(cov_sum, cfg.lambda_orth);

                let partial = g.add(quad, align);
                let loss = g.add(partial, reg);
                loss_v = g.value(loss).item();
                if !loss_v.is_finite() {
                    return Err(FbmError::Diverged {
                        step,
                        quantity: "tabular FB loss".into(),
                    });
                }
                let grads = g.backward(loss)?;
                let gmap = online.collect_grads(&grads);
                adam.step(&mut self.params, &gmap);
            }
            polyak_update(&mut self.targets, &self.params, cfg.polyak_tau)?;
            trace.push(loss_v);
        }
        Ok(trace)
    }

    pub fn b_matrix(&self) -> Tensor {
        normalized_rows(self.params.tensor("b_raw"), (self.d as f64).sqrt())
    }

    /// The learned successor measure F B^T rho with rho uniform: entry
    /// [s*A + a, s'] approximates M(s, a, {s'}).
    pub fn m_hat(&self) -> Vec<f64> {
        let f = self.params.tensor("f");
        let b = self.b_matrix();
        let m = f.matmul(&b.transpose());
        m.data()
            .iter()
            .map(|v| v / self.n_states as f64)
            .collect()
    }
}

fn normalized_rows(raw: &Tensor, target: f64) -> Tensor {
    let mut out = raw.clone();
    for r in 0..out.rows() {
        let norm = (out.row(r).iter().map(|v| v * v).sum::<f64>() + 1e-24).sqrt();
        for v in out.row_mut(r) {
            *v *= target / norm;
        }
    }
    out
}

/// Task-conditioned tabular FB with greedy policy improvement. F(s, a, z) =
/// W_{sa} g(z) over fixed features g(z) = [relu(z); relu(-z); 1]: the split
/// keeps Q = F^T z expressive for signed task vectors (a strictly linear map
/// would make Q even in z, collapsing the policies of z and -z onto each
/// other). The discrete policy is the exact argmax of Q.
pub struct TabularZFb {
    pub d: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub params: ParamSet,
    pub targets: ParamSet,
}

impl TabularZFb {
    fn feature_dim(d: usize) -> usize {
        2 * d + 1
    }

    /// Fixed z features: [relu(z); relu(-z); 1].
    fn z_features(z: &[f64]) -> Vec<f64> {
        let mut g = Vec::with_capacity(2 * z.len() + 1);
        g.extend(z.iter().map(|&v| v.max(0.0)));
        g.extend(z.iter().map(|&v| (-v).max(0.0)));
        g.push(1.0);
        g
    }

    pub fn init(mdp: &FiniteMdp, d: usize, seed: u64) -> Result<TabularZFb> {
        let mut rng = Rng::stream(seed, "tabular_zfb_init");
        let mut params = ParamSet::new();
        let scale = 1.0 / (d as f64);
        params.add(
            "w",
            init_table(
                &mut rng,
                mdp.n_states * mdp.n_actions * d,
                Self::feature_dim(d),
                scale,
            ),
        )?;
        params.add("b_raw", init_table(&mut rng, mdp.n_states, d, 0.5))?;
        let targets = params.clone_subset_frozen(&["w", "b_raw"]);
        Ok(TabularZFb {
            d,
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            gamma: mdp.gamma,
            params,
            targets,
        })
    }

    fn f_table(&self, w: &Tensor, z: &[f64]) -> Tensor {
        // rows s*A + a of W g(z)
        let (sa, d) = (self.n_states * self.n_actions, self.d);
        let g = Self::z_features(z);
        let fd = Self::feature_dim(d);
        Tensor::from_fn(sa, d, |row, col| {
            let base = (row * d + col) * fd;
            w.data()[base..base + fd]
                .iter()
                .zip(&g)
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    /// Greedy actions of Q(s, a, z) = F(s, a, z)^T z.
    pub fn greedy_actions(&self, z: &[f64]) -> Vec<usize> {
        let q = self.q_values(z);
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .max_by(|&a, &b| {
                        q[s * self.n_actions + a]
                            .partial_cmp(&q[s * self.n_actions + b])
                            .unwrap()
                    })
                    .unwrap()
            })
            .collect()
    }

    pub fn q_values(&self, z: &[f64]) -> Vec<f64> {
        let f = self.f_table(self.params.tensor("w"), z);
        (0..self.n_states * self.n_actions)
            .map(|row| f.row(row).iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn b_matrix(&self) -> Tensor {
        normalized_rows(self.params.tensor("b_raw"), (self.d as f64).sqrt())
    }

    /// Task inference with the exact uniform state distribution:
    /// z = (1/S) B^T r, rescaled to the sqrt(d) sphere so the policy is read
    /// at the scale the critic was trained on.
    pub fn infer_z(&self, rewards: &[f64]) -> Result<Vec<f64>> {
        if rewards.len() != self.n_states {
            return Err(FbmError::contract("reward vector length mismatch"));
        }
        let b = self.b_matrix();
        let mut z = vec![0.0; self.d];
        for s in 0..self.n_states {
            for (acc, v) in z.iter_mut().zip(b.row(s)) {
                *acc += rewards[s] * v / self.n_states as f64;
            }
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let target = (self.d as f64).sqrt();
            for v in &mut z {
                *v *= target / norm;
            }
        }
        Ok(z)
    }

    /// Exact-expectation TD training with greedy policy improvement and mixed
    /// z sampling. Returns the loss trace.
    pub fn train(&mut self, mdp: &FiniteMdp, cfg: &TabularFbConfig) -> Result<Vec<f64>> {
        let p = transition_tensor(mdp);
        let sqrt_d = (self.d as f64).sqrt();
        let mut adam = Adam::new(cfg.lr);
        let mut z_rng = Rng::stream(cfg.seed, "tabular_zfb_z");
        let mut trace = Vec::with_capacity(cfg.steps as usize);
        for step in 1..=cfg.steps {
            // mixed z draws: uniform sphere or a row of the current B
            let b_now = self.b_matrix();
            let mut zs: Vec<Vec<f64>> = Vec::with_capacity(cfg.z_batch);
            for _ in 0..cfg.z_batch {
                if z_rng.bernoulli(cfg.z_mix) {
                    zs.push(z_rng.sphere_point(self.d, sqrt_d));
                } else {
                    zs.push(b_now.row(z_rng.below(self.n_states)).to_vec());
                }
            }

            let loss_v;
            {
                let mut g = Graph::new();
                let online = self.params.bind_all(&mut g);
                let target = self.targets.bind_frozen(&mut g);
                let p_c = g.constant(p.clone());
                let w = online.var("w");
                let w_bar = target.var("w");
                let b = {
                    let raw = online.var("b_raw");
                    g.row_l2_normalize(raw, sqrt_d)
                };
                let b_bar = {
                    let raw = target.var("b_raw");
                    g.row_l2_normalize(raw, sqrt_d)
                };
                let b_t = g.transpose(b);
                let b_bar_t = g.transpose(b_bar);

                let mut total: Option<Var> = None;
                for z in &zs {
                    let feats = Self::z_features(z);
                    let zc = g.constant(Tensor::from_vec(Self::feature_dim(self.d), 1, feats));
                    let f_flat = g.matmul(w, zc);
                    let f = g.reshape(f_flat, self.n_states * self.n_actions, self.d);
                    let f_bar_flat = g.matmul(w_bar, zc);
                    let f_bar = g.reshape(f_bar_flat, self.n_states * self.n_actions, self.d);

                    // greedy policy of the target critic for this z; the
                    // slowly moving target keeps policy improvement stable
                    let pi: Vec<usize> = {
                        let fv = g.value(f_bar);
                        (0..self.n_states)
                            .map(|s| {
                                (0..self.n_actions)
                                    .max_by(|&a1, &a2| {
                                        let q1: f64 = fv
                                            .row(s * self.n_actions + a1)
                                            .iter()
                                            .zip(z)
                                            .map(|(x, y)| x * y)
                                            .sum();
                                        let q2: f64 = fv
                                            .row(s * self.n_actions + a2)
                                            .iter()
                                            .zip(z)
                                            .map(|(x, y)| x * y)
                                            .sum();
                                        q1.partial_cmp(&q2).unwrap()
                                    })
                                    .unwrap()
                            })
                            .collect()
                    };
                    let gather: Vec<usize> = (0..self.n_states)
                        .map(|s| s * self.n_actions + pi[s])
                        .collect();
                    let f_pi = g.gather_rows(f_bar, &gather);
                    let exp_next = g.matmul(p_c, f_pi);
                    let m_target_raw = g.matmul(exp_next, b_bar_t);
                    let m_target = g.scale(m_target_raw, self.gamma);
                    let m_online = g.matmul(f, b_bar_t);
                    let diff = g.sub(m_online, m_target);
                    let sq = g.square(diff);
                    let quad = g.mean_all(sq);

                    let fb = g.matmul(f, b_t);
                    let weighted = g.mul(p_c, fb);
                    let rows = g.row_sum(weighted);
                    let align_mean = g.mean_all(rows);
                    let align = g.scale(align_mean, -2.0);

                    let term = g.add(quad, align);
                    total = Some(match total {
                        None => term,
                        Some(t) => g.add(t, term),
                    });
                }
                let data_terms = g.scale(total.unwrap(), 1.0 / cfg.z_batch as f64);

                let cov_raw = g.matmul(b_t, b);
                let cov = g.scale(cov_raw, 1.0 / self.n_states as f64);
                let eye = g.constant(Tensor::identity(self.d));
                let cov_err = g.sub(cov, eye);
                let cov_sq = g.square(cov_err);
                let cov_sum = g.sum_all(cov_sq);
                let reg = g.scale(cov_sum, cfg.lambda_orth);
                let loss = g.add(data_terms, reg);

                loss_v = g.value(loss).item();
                if !loss_v.is_finite() {
                    return Err(FbmError::Diverged {
                        step,
                        quantity: "tabular z-FB loss".into(),
                    });
                }
                let grads = g.backward(loss)?;
                let gmap = online.collect_grads(&grads);
                adam.step(&mut self.params, &gmap);
            }
            polyak_update(&mut self.targets, &self.params, cfg.polyak_tau)?;
            trace.push(loss_v);
        }
        Ok(trace)
    }

    /// The learned measure for one z: [s*A + a, s'] of F_z B^T / S.
    pub fn m_hat(&self, z: &[f64]) -> Vec<f64> {
        let f = self.f_table(self.params.tensor("w"), z);
        let b = self.b_matrix();
        let m = f.matmul(&b.transpose());
        m.data()
            .iter()
            .map(|v| v / self.n_states as f64)
            .collect()
    }

    pub fn save(&self, path: &std::path::Path, step: u64) -> Result<()> {
        let mut all = self.params.clone();
        for p in self.targets.iter() {
            all.add_frozen(&format!("target.{}", p.name), p.tensor.clone())?;
        }
        let hyper = json!({
            "kind": "tabular_z_fb",
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "d": self.d,
            "gamma": self.gamma,
        });
        checkpoint::save(path, &all, &hyper, step)
    }

    pub fn load(path: &std::path::Path) -> Result<(TabularZFb, u64)> {
        let (all, hyper, step) = checkpoint::load(path)?;
        if hyper["kind"] != "tabular_z_fb" {
            return Err(FbmError::Format(format!(
                "checkpoint kind {} is not a tabular z-FB model",
                hyper["kind"]
            )));
        }
        let d = hyper["d"].as_u64().unwrap_or(0) as usize;
        let n_states = hyper["n_states"].as_u64().unwrap_or(0) as usize;
        let n_actions = hyper["n_actions"].as_u64().unwrap_or(0) as usize;
        let gamma = hyper["gamma"].as_f64().unwrap_or(0.0);
        let mut params = ParamSet::new();
        let mut targets = ParamSet::new();
        for p in all.iter() {
            if let Some(name) = p.name.strip_prefix("target.") {
                targets.add_frozen(name, p.tensor.clone())?;
            } else {
                params.add(&p.name, p.tensor.clone())?;
            }
        }
        Ok((
            TabularZFb {
                d,
                n_states,
                n_actions,
                gamma,
                params,
                targets,
            },
            step,
        ))
    }
}
