//! Exact ground truth on finite MDPs.
//!
//! Successor measures via dense linear solves, Bellman-optimality value
//! iteration with the reward-on-arrival convention R(s_{t+1}), and belief
//! expansion for small finite POMDPs. These back every derived expectation in
//! the test suites; exactness beats scalability here, so state spaces are
//! capped and solves are dense Gaussian elimination with partial pivoting.

use std::collections::BTreeMap;

use crate::error::{FbmError, Result};

const MAX_STATES: usize = 10_000;
const ROW_SUM_TOL: f64 = 1e-12;

/// A finite MDP: dense transition array P[s, a, s'] and per-task state
/// reward vectors.
#[derive(Clone, Debug)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    p: Vec<f64>,
    pub gamma: f64,
    rewards: BTreeMap<String, Vec<f64>>,
}

impl FiniteMdp {
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>, gamma: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(FbmError::contract("MDP needs states and actions"));
        }
        if n_states > MAX_STATES {
            return Err(FbmError::contract(format!(
                "state space {n_states} exceeds the dense-solver cap {MAX_STATES}"
            )));
        }
        if p.len() != n_states * n_actions * n_states {
            return Err(FbmError::contract(format!(
                "transition array has {} entries, expected {}",
                p.len(),
                n_states * n_actions * n_states
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(FbmError::contract(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let sum: f64 = p[(s * n_actions + a) * n_states..(s * n_actions + a + 1) * n_states]
                    .iter()
                    .sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(FbmError::contract(format!(
                        "P[{s},{a},.] sums to {sum}, expected 1 within {ROW_SUM_TOL}"
                    )));
                }
            }
        }
        Ok(FiniteMdp {
            n_states,
            n_actions,
            p,
            gamma,
            rewards: BTreeMap::new(),
        })
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.p[base..base + self.n_states]
    }

    pub fn add_reward(&mut self, task_id: &str, rewards: Vec<f64>) -> Result<()> {
        if rewards.len() != self.n_states {
            return Err(FbmError::contract(format!(
                "reward vector has {} entries for {} states",
                rewards.len(),
                self.n_states
            )));
        }
        self.rewards.insert(task_id.to_string(), rewards);
        Ok(())
    }

    pub fn reward(&self, task_id: &str) -> Result<&[f64]> {
        self.rewards
            .get(task_id)
            .map(|v| v.as_slice())
            .ok_or_else(|| FbmError::contract(format!("unknown task '{task_id}'")))
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.rewards.keys().cloned().collect()
    }

    /// State-to-state transition matrix under a stochastic policy (rows S,
    /// cols S). `policy[s * n_actions + a]` is pi(a|s).
    pub fn policy_transition(&self, policy: &[f64]) -> Vec<f64> {
        assert_eq!(policy.len(), self.n_states * self.n_actions);
        let s_n = self.n_states;
        let mut out = vec![0.0; s_n * s_n];
        for s in 0..s_n {
            for a in 0..self.n_actions {
                let w = policy[s * self.n_actions + a];
                if w == 0.0 {
                    continue;
                }
                for (sp, &pr) in self.row(s, a).iter().enumerate() {
                    out[s * s_n + sp] += w * pr;
                }
            }
        }
        out
    }
}

/// A deterministic policy expressed as a stochastic policy matrix.
pub fn deterministic_policy(mdp: &FiniteMdp, actions: &[usize]) -> Vec<f64> {
    assert_eq!(actions.len(), mdp.n_states);
    let mut pi = vec![0.0; mdp.n_states * mdp.n_actions];
    for (s, &a) in actions.iter().enumerate() {
        pi[s * mdp.n_actions + a] = 1.0;
    }
    pi
}

/// The uniform-random stochastic policy matrix.
pub fn uniform_policy(mdp: &FiniteMdp) -> Vec<f64> {
    vec![1.0 / mdp.n_actions as f64; mdp.n_states * mdp.n_actions]
}

/// Solves A X = B by Gaussian elimination with partial pivoting. `a` is n x n
/// row-major, `b` is n x m row-major; returns X (n x m).
pub fn solve_dense(a: &[f64], b: &[f64], n: usize, m: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n * m);
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-300 {
            return Err(FbmError::contract("singular linear system".to_string()));
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            for c in 0..m {
                x.swap(col * m + c, piv * m + c);
            }
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            for c in 0..m {
                x[r * m + c] -= f * x[col * m + c];
            }
        }
    }
    for col in (0..n).rev() {
        let d = a[col * n + col];
        for c in 0..m {
            x[col * m + c] /= d;
        }
        for r in 0..col {
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for c in 0..m {
                x[r * m + c] -= f * x[col * m + c];
            }
        }
    }
    Ok(x)
}

/// The exact successor measure M[s, a, s'] = sum_t gamma^t Pr(s_{t+1} = s')
/// under the policy, i.e. M = P (I - gamma P_pi)^{-1}; the t = 0 term is the
/// one-step distribution P(.|s, a). Rows sum to 1/(1 - gamma).
pub fn exact_successor_measure(mdp: &FiniteMdp, policy: &[f64]) -> Result<Vec<f64>> {
    let n = mdp.n_states;
    let p_pi = mdp.policy_transition(policy);
    // (I - gamma P_pi)^T since we multiply on the right: M = P X with
    // X = (I - gamma P_pi)^{-1}
    let mut system = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            system[r * n + c] = if r == c { 1.0 } else { 0.0 } - mdp.gamma * p_pi[r * n + c];
        }
    }
    let identity: Vec<f64> = {
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        id
    };
    let x = solve_dense(&system, &identity, n, n)?;
    let mut m = vec![0.0; n * mdp.n_actions * n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let row = mdp.row(s, a);
            let out = &mut m[(s * mdp.n_actions + a) * n..(s * mdp.n_actions + a + 1) * n];
            for (sp, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (mid, &pr) in row.iter().enumerate() {
                    if pr != 0.0 {
                        acc += pr * x[mid * n + sp];
                    }
                }
                *o = acc;
            }
        }
    }
    Ok(m)
}

/// Output of value iteration.
#[derive(Clone, Debug)]
pub struct ValueIterationResult {
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub greedy: Vec<usize>,
    pub iterations: usize,
}

impl ValueIterationResult {
    /// True when `action` attains the optimal value at `s` within `tol`.
    pub fn is_optimal_action(&self, s: usize, action: usize, n_actions: usize, tol: f64) -> bool {
        let base = s * n_actions;
        let best = (0..n_actions)
            .map(|a| self.q[base + a])
            .fold(f64::NEG_INFINITY, f64::max);
        self.q[base + action] >= best - tol
    }
}

/// Bellman-optimality iteration until the sup-norm change drops below `tol`.
/// Q(s,a) = sum_s' P[s,a,s'] (R(s') + gamma V(s')).
pub fn value_iteration(mdp: &FiniteMdp, task_id: &str, tol: f64) -> Result<ValueIterationResult> {
    if tol <= 0.0 {
        return Err(FbmError::contract("tolerance must be positive"));
    }
    let rewards = mdp.reward(task_id)?.to_vec();
    let n = mdp.n_states;
    let mut v = vec![0.0; n];
    let mut q = vec![0.0; n * mdp.n_actions];
    let max_iter = 100_000;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let mut delta = 0.0f64;
        let mut new_v = vec![0.0; n];
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let mut acc = 0.0;
                for (sp, &pr) in mdp.row(s, a).iter().enumerate() {
                    if pr != 0.0 {
                        acc += pr * (rewards[sp] + mdp.gamma * v[sp]);
                    }
                }
                q[s * mdp.n_actions + a] = acc;
                best = best.max(acc);
            }
            new_v[s] = best;
            delta = delta.max((new_v[s] - v[s]).abs());
        }
        v = new_v;
        if delta < tol {
            break;
        }
    }
    let greedy = (0..n)
        .map(|s| {
            (0..mdp.n_actions)
                .max_by(|&a, &b| {
                    q[s * mdp.n_actions + a]
                        .partial_cmp(&q[s * mdp.n_actions + b])
                        .unwrap()
                })
                .unwrap()
        })
        .collect();
    Ok(ValueIterationResult {
        v,
        q,
        greedy,
        iterations,
    })
}

/// Q^pi by exact policy evaluation: solve (I - gamma P_pi) V = r_pi, then
/// Q(s,a) = rbar(s,a) + gamma sum_s' P V.
pub fn policy_evaluation_q(mdp: &FiniteMdp, task_id: &str, policy: &[f64]) -> Result<Vec<f64>> {
    let rewards = mdp.reward(task_id)?;
    let n = mdp.n_states;
    let p_pi = mdp.policy_transition(policy);
    // rbar(s,a) = E[R(s') | s, a]
    let mut rbar = vec![0.0; n * mdp.n_actions];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            rbar[s * mdp.n_actions + a] = mdp
                .row(s, a)
                .iter()
                .zip(rewards)
                .map(|(p, r)| p * r)
                .sum();
        }
    }
    let r_pi: Vec<f64> = (0..n)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| policy[s * mdp.n_actions + a] * rbar[s * mdp.n_actions + a])
                .sum()
        })
        .collect();
    let mut system = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            system[r * n + c] = if r == c { 1.0 } else { 0.0 } - mdp.gamma * p_pi[r * n + c];
        }
    }
    let v = solve_dense(&system, &r_pi, n, 1)?;
    let mut q = vec![0.0; n * mdp.n_actions];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let mut acc = rbar[s * mdp.n_actions + a];
            for (sp, &pr) in mdp.row(s, a).iter().enumerate() {
                acc += mdp.gamma * pr * v[sp];
            }
            q[s * mdp.n_actions + a] = acc;
        }
    }
    Ok(q)
}

/// A finite POMDP for belief expansion: an MDP plus an observation matrix
/// O[s', o] = Pr(o | arrived at s') over a finite observation alphabet, and
/// an initial belief.
#[derive(Clone, Debug)]
pub struct FinitePomdp {
    pub mdp: FiniteMdp,
    pub n_obs: usize,
    pub obs: Vec<f64>,
    pub initial_belief: Vec<f64>,
}

impl FinitePomdp {
    pub fn new(
        mdp: FiniteMdp,
        n_obs: usize,
        obs: Vec<f64>,
        initial_belief: Vec<f64>,
    ) -> Result<Self> {
        if obs.len() != mdp.n_states * n_obs {
            return Err(FbmError::contract("observation matrix shape mismatch"));
        }
        for s in 0..mdp.n_states {
            let sum: f64 = obs[s * n_obs..(s + 1) * n_obs].iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(FbmError::contract(format!(
                    "O[{s},.] sums to {sum}, expected 1"
                )));
            }
        }
        if initial_belief.len() != mdp.n_states {
            return Err(FbmError::contract("initial belief length mismatch"));
        }
        Ok(FinitePomdp {
            mdp,
            n_obs,
            obs,
            initial_belief,
        })
    }
}

/// The belief MDP produced by expansion plus the belief points themselves.
#[derive(Clone, Debug)]
pub struct BeliefMdp {
    pub mdp: FiniteMdp,
    pub beliefs: Vec<Vec<f64>>,
}

fn belief_key(b: &[f64]) -> Vec<i64> {
    b.iter().map(|v| (v * 1e9).round() as i64).collect()
}

/// Expands the reachable discretized belief space into a finite MDP whose
/// optimal value upper-bounds any memory policy's value in the POMDP.
/// Rewards on arrival are expectations under the arrival belief.
pub fn belief_expand(pomdp: &FinitePomdp, max_beliefs: usize) -> Result<BeliefMdp> {
    let n = pomdp.mdp.n_states;
    let n_a = pomdp.mdp.n_actions;
    let mut beliefs: Vec<Vec<f64>> = vec![pomdp.initial_belief.clone()];
    let mut key_index: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
    key_index.insert(belief_key(&pomdp.initial_belief), 0);
    // transitions[(b, a)] = list of (belief index, probability)
    let mut transitions: Vec<Vec<(usize, f64)>> = Vec::new();

    let mut frontier = 0;
    while frontier < beliefs.len() {
        let b = beliefs[frontier].clone();
        for a in 0..n_a {
            // predicted state distribution after action a
            let mut pred = vec![0.0; n];
            for (s, &w) in b.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (sp, &pr) in pomdp.mdp.row(s, a).iter().enumerate() {
                    pred[sp] += w * pr;
                }
            }
            let mut arcs: Vec<(usize, f64)> = Vec::new();
            for o in 0..pomdp.n_obs {
                let mut next: Vec<f64> = (0..n).map(|sp| pred[sp] * pomdp.obs[sp * pomdp.n_obs + o]).collect();
                let mass: f64 = next.iter().sum();
                if mass <= 1e-15 {
                    continue;
                }
                for v in &mut next {
                    *v /= mass;
                }
                let key = belief_key(&next);
                let idx = match key_index.get(&key) {
                    Some(&i) => i,
                    None => {
                        if beliefs.len() >= max_beliefs {
                            return Err(FbmError::contract(format!(
                                "belief expansion exceeded the cap of {max_beliefs} beliefs"
                            )));
                        }
                        beliefs.push(next);
                        key_index.insert(key, beliefs.len() - 1);
                        beliefs.len() - 1
                    }
                };
                arcs.push((idx, mass));
            }
            transitions.push(arcs);
        }
        frontier += 1;
    }

    let nb = beliefs.len();
    let mut p = vec![0.0; nb * n_a * nb];
    for (flat, arcs) in transitions.iter().enumerate() {
        let row = &mut p[flat * nb..(flat + 1) * nb];
        for &(idx, mass) in arcs {
            row[idx] += mass;
        }
        // numerical residue: fold any missing mass into the heaviest arc
        let sum: f64 = row.iter().sum();
        if let Some((argmax, _)) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        {
            row[argmax] += 1.0 - sum;
        }
    }
    let mut mdp = FiniteMdp::new(nb, n_a, p, pomdp.mdp.gamma)?;
    for task in pomdp.mdp.task_ids() {
        let rewards = pomdp.mdp.reward(&task)?;
        let belief_rewards: Vec<f64> = beliefs
            .iter()
            .map(|b| b.iter().zip(rewards).map(|(w, r)| w * r).sum())
            .collect();
        mdp.add_reward(&task, belief_rewards)?;
    }
    Ok(BeliefMdp { mdp, beliefs })
}

/// A fully observed POMDP wrapper: observation = exact state index.
pub fn fully_observed(mdp: FiniteMdp, initial_state: usize) -> FinitePomdp {
    let n = mdp.n_states;
    let mut obs = vec![0.0; n * n];
    for s in 0..n {
        obs[s * n + s] = 1.0;
    }
    let mut b0 = vec![0.0; n];
    b0[initial_state] = 1.0;
    FinitePomdp::new(mdp, n, obs, b0).expect("valid construction")
}

/// The two-state deterministic cycle used in oracle tests.
pub fn two_state_cycle(gamma: f64) -> FiniteMdp {
    // one action: 0 -> 1 -> 0
    let p = vec![
        0.0, 1.0, // from 0
        1.0, 0.0, // from 1
    ];
    FiniteMdp::new(2, 1, p, gamma).unwrap()
}

/// A random dense MDP with Dirichlet-ish rows, reproducible from the seed.
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> FiniteMdp {
    let mut rng = crate::rng::Rng::stream(seed, "random_mdp");
    let mut p = vec![0.0; n_states * n_actions * n_states];
    for row in p.chunks_exact_mut(n_states) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = -rng.uniform().max(1e-12).ln();
            sum += *v;
        }
        let mut acc = 0.0;
        for v in row.iter_mut().take(n_states - 1) {
            *v /= sum;
            acc += *v;
        }
        row[n_states - 1] = 1.0 - acc;
    }
    FiniteMdp::new(n_states, n_actions, p, gamma).unwrap()
}
