//! The evaluation protocol: deterministic rollouts with streaming recurrent
//! hidden states, task inference at test time, IQM aggregation with bootstrap
//! confidence intervals, the failure-mode harness, occlusion and dynamics
//! sweeps, and report generation.

pub mod report;
pub mod stats;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::bfm::{BfmModel, LatentTask, ModelConfig, Variant};
use crate::data::{generate_dataset, merge_datasets, BehaviourPolicy, OfflineDataset};
use crate::envgen::{
    observe, DeskEnv, DynamicsConfig, DynamicsSplit, Gridworld, OcclusionConfig, Routing,
    TaskReward,
};
use crate::error::{FbmError, Result};
use crate::rng::Rng;
use crate::trainer::{train, TrainConfig};
use crate::util::parallel_map;

/// Scores of one (variant, routing, task, seed, checkpoint) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub variant: String,
    pub routing: String,
    pub env: String,
    pub occlusion: String,
    pub dynamics_scale: f64,
    pub task: String,
    pub seed: u64,
    pub checkpoint_step: u64,
    pub returns: Vec<f64>,
    pub iqm: f64,
}

/// A collection of evaluation rows plus the aggregation protocol.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn push_rows(&mut self, rows: Vec<EvalRow>) {
        self.rows.extend(rows);
    }

    fn cells(
        &self,
        variant: &str,
        routing: &str,
        dynamics_scale: Option<f64>,
        step: u64,
    ) -> Vec<&EvalRow> {
        self.rows
            .iter()
            .filter(|r| {
                r.variant == variant
                    && r.routing == routing
                    && r.checkpoint_step == step
                    && dynamics_scale.map(|s| r.dynamics_scale == s).unwrap_or(true)
            })
            .collect()
    }

    fn checkpoint_steps(&self, variant: &str, routing: &str) -> Vec<u64> {
        let mut steps: Vec<u64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant && r.routing == routing)
            .map(|r| r.checkpoint_step)
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    /// Seed-averaged all-task IQM at one checkpoint: per seed, IQM over the
    /// per-task rollout IQMs; then the mean across seeds.
    pub fn all_task_iqm(
        &self,
        variant: &str,
        routing: &str,
        dynamics_scale: Option<f64>,
        step: u64,
    ) -> Result<f64> {
        let cells = self.cells(variant, routing, dynamics_scale, step);
        if cells.is_empty() {
            return Err(FbmError::contract(format!(
                "no rows for {variant}/{routing} at step {step}"
            )));
        }
        let mut seeds: Vec<u64> = cells.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut per_seed = Vec::with_capacity(seeds.len());
        for seed in seeds {
            let task_scores: Vec<f64> = cells
                .iter()
                .filter(|r| r.seed == seed)
                .map(|r| r.iqm)
                .collect();
            per_seed.push(stats::iqm(&task_scores)?);
        }
        Ok(per_seed.iter().sum::<f64>() / per_seed.len() as f64)
    }

    /// The checkpoint whose seed-averaged all-task IQM is maximal (earliest
    /// step wins ties).
    pub fn best_checkpoint(
        &self,
        variant: &str,
        routing: &str,
        dynamics_scale: Option<f64>,
    ) -> Result<u64> {
        let steps = self.checkpoint_steps(variant, routing);
        if steps.is_empty() {
            return Err(FbmError::contract(format!(
                "no evaluations recorded for {variant}/{routing}"
            )));
        }
        let mut best = (steps[0], f64::NEG_INFINITY);
        for step in steps {
            let score = self.all_task_iqm(variant, routing, dynamics_scale, step)?;
            if score > best.1 {
                best = (step, score);
            }
        }
        Ok(best.0)
    }

    /// Point estimate and percentile-bootstrap CI of the seed-averaged
    /// all-task IQM, resampling rollout-level scores within each (task, seed)
    /// cell.
    #[allow(clippy::too_many_arguments)]
    pub fn all_task_iqm_ci(
        &self,
        variant: &str,
        routing: &str,
        dynamics_scale: Option<f64>,
        step: u64,
        resamples: usize,
        level: f64,
        rng: &mut Rng,
    ) -> Result<(f64, f64, f64)> {
        let cells: Vec<EvalRow> = self
            .cells(variant, routing, dynamics_scale, step)
            .into_iter()
            .cloned()
            .collect();
        if cells.is_empty() {
            return Err(FbmError::contract("no rows to aggregate"));
        }
        let point = self.all_task_iqm(variant, routing, dynamics_scale, step)?;
        let mut seeds: Vec<u64> = cells.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();

        let mut boot_stats = Vec::with_capacity(resamples);
        for _ in 0..resamples {
            let mut per_seed = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let mut task_scores = Vec::new();
                for row in cells.iter().filter(|r| r.seed == seed) {
                    let n = row.returns.len();
                    let resampled: Vec<f64> =
                        (0..n).map(|_| row.returns[rng.below(n)]).collect();
                    task_scores.push(stats::iqm(&resampled)?);
                }
                per_seed.push(stats::iqm(&task_scores)?);
            }
            boot_stats.push(per_seed.iter().sum::<f64>() / per_seed.len() as f64);
        }
        boot_stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let alpha = 1.0 - level;
        let n = boot_stats.len();
        let lo_idx = (((alpha / 2.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
        let hi_idx = (((1.0 - alpha / 2.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
        let lo = boot_stats[lo_idx].min(point);
        let hi = boot_stats[hi_idx].max(point);
        Ok((point, lo, hi))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(
            "variant,routing,env,occlusion,dynamics_scale,task,seed,checkpoint_step,iqm,returns\n",
        );
        for r in &self.rows {
            let returns = r
                .returns
                .iter()
                .map(|v| format!("{v:.9e}"))
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.9e},{}\n",
                r.variant,
                r.routing,
                r.env,
                r.occlusion,
                r.dynamics_scale,
                r.task,
                r.seed,
                r.checkpoint_step,
                r.iqm,
                returns
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 10 {
                return Err(FbmError::Format(format!(
                    "line {} has {} fields, expected 10",
                    i + 1,
                    parts.len()
                )));
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| FbmError::Format(format!("bad float '{s}'")))
            };
            let returns = if parts[9].is_empty() {
                Vec::new()
            } else {
                parts[9]
                    .split(';')
                    .map(parse_f)
                    .collect::<Result<Vec<f64>>>()?
            };
            rows.push(EvalRow {
                variant: parts[0].to_string(),
                routing: parts[1].to_string(),
                env: parts[2].to_string(),
                occlusion: parts[3].to_string(),
                dynamics_scale: parse_f(parts[4])?,
                task: parts[5].to_string(),
                seed: parts[6]
                    .parse()
                    .map_err(|_| FbmError::Format("bad seed".into()))?,
                checkpoint_step: parts[7]
                    .parse()
                    .map_err(|_| FbmError::Format("bad step".into()))?,
                iqm: parse_f(parts[8])?,
                returns,
            });
        }
        Ok(EvalReport { rows })
    }
}

/// Evaluation-protocol settings.
#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub rollouts: usize,
    pub labels_k: usize,
    pub bootstrap_resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl EvalConfig {
    pub fn desk(seed: u64) -> Self {
        EvalConfig {
            rollouts: 10,
            labels_k: 1_000,
            bootstrap_resamples: 1_000,
            level: 0.95,
            seed,
        }
    }

    /// Full-size label budget (10k reward-labelled windows).
    pub fn paper(seed: u64) -> Self {
        EvalConfig {
            labels_k: 10_000,
            ..EvalConfig::desk(seed)
        }
    }
}

/// One deterministic-policy episode; returns the undiscounted return. Goal
/// tasks terminate on first success, dense tasks run to the horizon.
pub fn rollout_return(
    model: &BfmModel,
    z: &LatentTask,
    env: &DeskEnv,
    occl: &OcclusionConfig,
    dynamics: &DynamicsConfig,
    task: &TaskReward,
    rng: &mut Rng,
) -> Result<f64> {
    let spec = env.spec();
    let mut state = env.reset_with(rng);
    let mut agent = model.rollout_agent(z);
    let mut ret = 0.0;
    for _ in 0..spec.episode_length {
        let obs = observe(&state, occl, rng);
        let action = agent.act(&obs.values, &state.values)?;
        let (next, rewards, _) = env.step(&state, &action, dynamics, rng)?;
        let r = rewards[&task.task_id];
        ret += r;
        state = next;
        if task.is_goal() && r >= 1.0 {
            break;
        }
    }
    Ok(ret)
}

/// Evaluates one model checkpoint on every task: infer z from a labelled set
/// drawn from the dataset, run deterministic rollouts with streaming hidden
/// states, reduce to per-task IQMs. Rollouts parallelise over (task, rollout)
/// with independent rng streams.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_checkpoint(
    model: &BfmModel,
    env: &DeskEnv,
    occl: &OcclusionConfig,
    dynamics: &DynamicsConfig,
    dataset: &OfflineDataset,
    cfg: &EvalConfig,
    seed_label: u64,
    checkpoint_step: u64,
) -> Result<Vec<EvalRow>> {
    let tasks = env.tasks();
    if tasks.is_empty() {
        return Err(FbmError::contract("environment registers no tasks"));
    }
    // infer one task embedding per task
    let mut zs: BTreeMap<String, LatentTask> = BTreeMap::new();
    for task in tasks {
        let mut rng = Rng::stream(cfg.seed, &format!("labels/{}", task.task_id));
        let labelled =
            dataset.build_labelled_set(task, cfg.labels_k, model.cfg().l_backward, &mut rng)?;
        zs.insert(task.task_id.clone(), model.infer_task(&labelled)?);
    }

    let jobs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|t| (0..cfg.rollouts).map(move |r| (t, r)))
        .collect();
    let results: Vec<Result<f64>> = parallel_map(jobs.clone(), |(t, r)| {
        let task = &tasks[t];
        let mut rng = Rng::substream(
            cfg.seed,
            &format!("rollout/{}/{}", task.task_id, seed_label),
            r as u64,
        );
        rollout_return(model, &zs[&task.task_id], env, occl, dynamics, task, &mut rng)
    });

    let mut per_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((t, _r), res) in jobs.into_iter().zip(results) {
        per_task
            .entry(tasks[t].task_id.clone())
            .or_default()
            .push(res?);
    }
    let mut rows = Vec::new();
    for task in tasks {
        let returns = per_task.remove(&task.task_id).unwrap();
        let iqm = stats::iqm(&returns)?;
        rows.push(EvalRow {
            variant: model.cfg().variant.id().to_string(),
            routing: model.cfg().routing.id().to_string(),
            env: env.id().to_string(),
            occlusion: occl.mode.id().to_string(),
            dynamics_scale: dynamics.mass_scale,
            task: task.task_id.clone(),
            seed: seed_label,
            checkpoint_step,
            returns,
            iqm,
        });
    }
    Ok(rows)
}

/// Network sizes used by suite runs (independent of the paper-scale presets so
/// harness runtimes stay desk-sized).
#[derive(Clone, Debug)]
pub struct NetSizes {
    pub d: usize,
    pub f_hidden: Vec<usize>,
    pub b_hidden: Vec<usize>,
    pub pi_hidden: Vec<usize>,
    pub preproc_dim: usize,
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub l_forward: usize,
    pub l_backward: usize,
}

impl NetSizes {
    pub fn desk() -> Self {
        NetSizes {
            d: 16,
            f_hidden: vec![128, 128],
            b_hidden: vec![64, 64],
            pi_hidden: vec![128, 128],
            preproc_dim: 64,
            embed_dim: 64,
            gru_hidden: 64,
            l_forward: 8,
            l_backward: 8,
        }
    }

    /// Small sizes for harness and CI runs.
    pub fn compact() -> Self {
        NetSizes {
            d: 12,
            f_hidden: vec![64, 64],
            b_hidden: vec![48, 48],
            pi_hidden: vec![64, 64],
            preproc_dim: 32,
            embed_dim: 32,
            gru_hidden: 32,
            l_forward: 8,
            l_backward: 8,
        }
    }

    pub fn apply(&self, mut cfg: ModelConfig) -> ModelConfig {
        cfg.d = self.d;
        cfg.f_hidden = self.f_hidden.clone();
        cfg.b_hidden = self.b_hidden.clone();
        cfg.pi_hidden = self.pi_hidden.clone();
        cfg.preproc_dim = self.preproc_dim;
        cfg.embed_dim = self.embed_dim;
        cfg.gru_hidden = self.gru_hidden;
        cfg.l_forward = self.l_forward;
        cfg.l_backward = self.l_backward;
        cfg
    }
}

/// Builds the model configuration for an environment + occlusion + variant +
/// routing combination.
pub fn model_config_for(
    env: &DeskEnv,
    occl: &OcclusionConfig,
    variant: Variant,
    routing: Routing,
    sizes: &NetSizes,
    gamma: f64,
    seed: u64,
) -> ModelConfig {
    let spec = env.spec();
    let obs_dim = occl.obs_dim(spec.state_dim);
    let cfg = ModelConfig::desk(
        variant,
        routing,
        obs_dim,
        spec.state_dim,
        spec.action_space,
        gamma,
        seed,
    );
    sizes.apply(cfg)
}

/// One train-and-evaluate unit of a suite.
#[derive(Clone, Debug)]
pub struct SuiteRun {
    pub variant: Variant,
    pub routing: Routing,
    pub seed: u64,
}

/// Settings for the failure-mode and memory-benefit harnesses.
#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub runs: Vec<(Variant, Routing)>,
    pub seeds: Vec<u64>,
    pub data_episodes: usize,
    pub data_seed: u64,
    pub behaviour: BehaviourPolicy,
    pub sizes: NetSizes,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Include the fully observed FB reference run used for normalization.
    pub include_oracle_baseline: bool,
    /// Rescale inferred task embeddings to the sqrt(d) sphere at test time so
    /// policies are conditioned on the embedding scale they trained with.
    pub normalize_inferred_z: bool,
}

/// Aggregates for one (variant, routing) arm of a suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub variant: String,
    pub routing: String,
    pub best_step: u64,
    pub iqm: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Score divided by the fully observed FB reference (1.0 for the
    /// reference itself).
    pub normalized: f64,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub report: EvalReport,
    pub rows_path: PathBuf,
    pub summary_path: PathBuf,
}

impl SuiteReport {
    pub fn entry(&self, variant: Variant, routing: Routing) -> Option<&SuiteEntry> {
        self.entries
            .iter()
            .find(|e| e.variant == variant.id() && e.routing == routing.id())
    }
}

/// Trains and evaluates every (variant, routing, seed) arm on one shared
/// dataset, then aggregates scores normalized against the fully observed FB
/// run. This is the harness behind both the failure-mode decomposition and
/// the memory-benefit comparisons.
pub fn failure_mode_suite(
    env: &DeskEnv,
    occl: &OcclusionConfig,
    cfg: &SuiteConfig,
    out_dir: &Path,
) -> Result<SuiteReport> {
    std::fs::create_dir_all(out_dir)?;
    let dataset = generate_dataset(
        env,
        cfg.behaviour,
        occl,
        DynamicsConfig::base(),
        cfg.data_episodes,
        cfg.data_seed,
    )?;

    let mut arms: Vec<(Variant, Routing)> = cfg.runs.clone();
    if cfg.include_oracle_baseline && !arms.contains(&(Variant::Fb, Routing::None)) {
        arms.push((Variant::Fb, Routing::None));
    }
    let mut runs: Vec<SuiteRun> = Vec::new();
    for &(variant, routing) in &arms {
        for &seed in &cfg.seeds {
            runs.push(SuiteRun {
                variant,
                routing,
                seed,
            });
        }
    }

    let results: Vec<Result<Vec<EvalRow>>> = parallel_map(runs, |run| {
        run_one_arm(env, occl, cfg, &dataset, &run, out_dir)
    });
    let mut report = EvalReport::default();
    for rows in results {
        report.push_rows(rows?);
    }

    let rows_path = out_dir.join("eval_rows.csv");
    report.write_csv(&rows_path)?;

    // reference score for normalization
    let baseline = if cfg.include_oracle_baseline {
        let step = report.best_checkpoint(Variant::Fb.id(), Routing::None.id(), None)?;
        Some(report.all_task_iqm(Variant::Fb.id(), Routing::None.id(), None, step)?)
    } else {
        None
    };

    let mut entries = Vec::new();
    let mut ci_rng = Rng::stream(cfg.eval.seed, "suite_ci");
    for &(variant, routing) in &arms {
        let step = report.best_checkpoint(variant.id(), routing.id(), None)?;
        let (point, lo, hi) = report.all_task_iqm_ci(
            variant.id(),
            routing.id(),
            None,
            step,
            cfg.eval.bootstrap_resamples,
            cfg.eval.level,
            &mut ci_rng,
        )?;
        let normalized = match baseline {
            Some(b) if b.abs() > 1e-12 => point / b,
            _ => f64::NAN,
        };
        entries.push(SuiteEntry {
            variant: variant.id().to_string(),
            routing: routing.id().to_string(),
            best_step: step,
            iqm: point,
            ci_lo: lo,
            ci_hi: hi,
            normalized,
        });
    }

    let summary_path = out_dir.join("suite_summary.csv");
    let mut text = String::from("variant,routing,best_step,iqm,ci_lo,ci_hi,normalized\n");
    for e in &entries {
        text.push_str(&format!(
            "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            e.variant, e.routing, e.best_step, e.iqm, e.ci_lo, e.ci_hi, e.normalized
        ));
    }
    std::fs::write(&summary_path, text)?;

    Ok(SuiteReport {
        entries,
        report,
        rows_path,
        summary_path,
    })
}

fn run_one_arm(
    env: &DeskEnv,
    occl: &OcclusionConfig,
    cfg: &SuiteConfig,
    dataset: &OfflineDataset,
    run: &SuiteRun,
    out_dir: &Path,
) -> Result<Vec<EvalRow>> {
    let arm_occl = OcclusionConfig {
        mode: occl.mode,
        routing: run.routing,
    };
    let mut model_cfg = model_config_for(
        env,
        &arm_occl,
        run.variant,
        run.routing,
        &cfg.sizes,
        cfg.train.gamma,
        run.seed,
    );
    model_cfg.normalize_inferred_z = cfg.normalize_inferred_z;
    let mut model = BfmModel::build(model_cfg)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = run.seed;
    let run_dir = out_dir.join(format!(
        "run_{}_{}_{}",
        run.variant.id(),
        run.routing.id(),
        run.seed
    ));
    let outcome = train(&mut model, dataset, &train_cfg, &run_dir)?;

    let mut rows = Vec::new();
    for (step, path) in &outcome.checkpoints {
        let (ckpt_model, _) = BfmModel::load(path)?;
        rows.extend(evaluate_checkpoint(
            &ckpt_model,
            env,
            &arm_occl,
            &DynamicsConfig::base(),
            dataset,
            &cfg.eval,
            run.seed,
            *step,
        )?);
    }
    Ok(rows)
}

/// Per-variant interpolation/extrapolation aggregates of the dynamics split
/// harness.
#[derive(Clone, Debug)]
pub struct DynSplitEntry {
    pub variant: String,
    pub test_scale: f64,
    pub best_step: u64,
    pub iqm: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug)]
pub struct DynSplitReport {
    pub entries: Vec<DynSplitEntry>,
    pub report: EvalReport,
    pub rows_path: PathBuf,
    pub summary_path: PathBuf,
}

impl DynSplitReport {
    pub fn entry(&self, variant: Variant, scale: f64) -> Option<&DynSplitEntry> {
        self.entries
            .iter()
            .find(|e| e.variant == variant.id() && e.test_scale == scale)
    }
}

/// Trains each variant on the union of per-scale datasets (per-episode tags
/// preserved) and evaluates on every test scale.
pub fn dynamics_split_suite(
    env: &DeskEnv,
    split: &DynamicsSplit,
    variants: &[Variant],
    cfg: &SuiteConfig,
    out_dir: &Path,
) -> Result<DynSplitReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut parts = Vec::new();
    for (i, dyn_cfg) in split.train.iter().enumerate() {
        parts.push(generate_dataset(
            env,
            cfg.behaviour,
            &OcclusionConfig::fully_observed(),
            *dyn_cfg,
            cfg.data_episodes,
            cfg.data_seed + i as u64 * 1000,
        )?);
    }
    let dataset = merge_datasets(parts)?;

    let mut runs: Vec<SuiteRun> = Vec::new();
    for &variant in variants {
        for &seed in &cfg.seeds {
            runs.push(SuiteRun {
                variant,
                routing: Routing::All,
                seed,
            });
        }
    }
    let test_scales: Vec<DynamicsConfig> = split.test.clone();
    let results: Vec<Result<Vec<EvalRow>>> = parallel_map(runs, |run| {
        let mut model_cfg = model_config_for(
            env,
            &OcclusionConfig::fully_observed(),
            run.variant,
            Routing::All,
            &cfg.sizes,
            cfg.train.gamma,
            run.seed,
        );
        model_cfg.normalize_inferred_z = cfg.normalize_inferred_z;
        let mut model = BfmModel::build(model_cfg)?;
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = run.seed;
        let run_dir = out_dir.join(format!("run_{}_{}", run.variant.id(), run.seed));
        let outcome = train(&mut model, &dataset, &train_cfg, &run_dir)?;
        let mut rows = Vec::new();
        for (step, path) in &outcome.checkpoints {
            let (ckpt_model, _) = BfmModel::load(path)?;
            for dyn_cfg in &test_scales {
                rows.extend(evaluate_checkpoint(
                    &ckpt_model,
                    env,
                    &OcclusionConfig::fully_observed(),
                    dyn_cfg,
                    &dataset,
                    &cfg.eval,
                    run.seed,
                    *step,
                )?);
            }
        }
        Ok(rows)
    });

    let mut report = EvalReport::default();
    for rows in results {
        report.push_rows(rows?);
    }
    let rows_path = out_dir.join("eval_rows.csv");
    report.write_csv(&rows_path)?;

    let mut entries = Vec::new();
    let mut ci_rng = Rng::stream(cfg.eval.seed, "dyn_ci");
    for &variant in variants {
        for dyn_cfg in &split.test {
            let scale = dyn_cfg.mass_scale;
            let step =
                report.best_checkpoint(variant.id(), Routing::All.id(), Some(scale))?;
            let (point, lo, hi) = report.all_task_iqm_ci(
                variant.id(),
                Routing::All.id(),
                Some(scale),
                step,
                cfg.eval.bootstrap_resamples,
                cfg.eval.level,
                &mut ci_rng,
            )?;
            entries.push(DynSplitEntry {
                variant: variant.id().to_string(),
                test_scale: scale,
                best_step: step,
                iqm: point,
                ci_lo: lo,
                ci_hi: hi,
            });
        }
    }
    let summary_path = out_dir.join("dynamics_summary.csv");
    let mut text = String::from("variant,test_scale,best_step,iqm,ci_lo,ci_hi\n");
    for e in &entries {
        text.push_str(&format!(
            "{},{},{},{:.9e},{:.9e},{:.9e}\n",
            e.variant, e.test_scale, e.best_step, e.iqm, e.ci_lo, e.ci_hi
        ));
    }
    std::fs::write(&summary_path, text)?;
    Ok(DynSplitReport {
        entries,
        report,
        rows_path,
        summary_path,
    })
}

/// One job of a sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepJob {
    pub label: String,
    pub occlusion: OcclusionConfig,
    pub variant: Variant,
    pub routing: Routing,
    pub l_forward: usize,
    pub l_backward: usize,
}

/// Which hyperparameter grid to sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepGrid {
    /// sigma and p_flick in {0.05, 0.1, 0.2} for memory-free FB.
    PomdpHyper,
    /// Forward/policy context length in {2, 4, 8, 16, 32}; the backward model
    /// is memory-free over true states.
    ContextForward,
    /// Backward context length in {2, 4, 8, 16, 32}; the forward model and
    /// policy are memory-free over true states.
    ContextBackward,
}

impl SweepGrid {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pomdp" => Ok(SweepGrid::PomdpHyper),
            "context-forward" => Ok(SweepGrid::ContextForward),
            "context-backward" => Ok(SweepGrid::ContextBackward),
            other => Err(FbmError::Config(format!(
                "unknown sweep grid '{other}' (expected pomdp|context-forward|context-backward)"
            ))),
        }
    }
}

pub const POMDP_SWEEP_VALUES: [f64; 3] = [0.05, 0.1, 0.2];
pub const CONTEXT_SWEEP_VALUES: [usize; 5] = [2, 4, 8, 16, 32];

/// Enumerates the jobs of a sweep grid. Pure; the CLI executes them through
/// the suite machinery.
pub fn sweep_plan(
    grid: SweepGrid,
    default_sigma: f64,
    default_p: f64,
    base_l: usize,
) -> Vec<SweepJob> {
    use crate::envgen::OcclusionMode;
    match grid {
        SweepGrid::PomdpHyper => {
            let mut jobs = Vec::new();
            for &sigma in &POMDP_SWEEP_VALUES {
                jobs.push(SweepJob {
                    label: format!("noisy_sigma_{sigma}"),
                    occlusion: OcclusionConfig {
                        mode: OcclusionMode::Noisy { sigma },
                        routing: Routing::All,
                    },
                    variant: Variant::Fb,
                    routing: Routing::All,
                    l_forward: base_l,
                    l_backward: base_l,
                });
            }
            for &p in &POMDP_SWEEP_VALUES {
                jobs.push(SweepJob {
                    label: format!("flickering_p_{p}"),
                    occlusion: OcclusionConfig {
                        mode: OcclusionMode::Flickering { p },
                        routing: Routing::All,
                    },
                    variant: Variant::Fb,
                    routing: Routing::All,
                    l_forward: base_l,
                    l_backward: base_l,
                });
            }
            jobs
        }
        SweepGrid::ContextForward => CONTEXT_SWEEP_VALUES
            .iter()
            .map(|&l| SweepJob {
                label: format!("l_forward_{l}"),
                occlusion: OcclusionConfig {
                    mode: OcclusionMode::Noisy {
                        sigma: default_sigma,
                    },
                    routing: Routing::ForwardPolicyOnly,
                },
                variant: Variant::FbM,
                routing: Routing::ForwardPolicyOnly,
                l_forward: l,
                l_backward: base_l,
            })
            .collect(),
        SweepGrid::ContextBackward => CONTEXT_SWEEP_VALUES
            .iter()
            .map(|&l| SweepJob {
                label: format!("l_backward_{l}"),
                occlusion: OcclusionConfig {
                    mode: OcclusionMode::Flickering { p: default_p },
                    routing: Routing::BackwardOnly,
                },
                variant: Variant::FbM,
                routing: Routing::BackwardOnly,
                l_forward: base_l,
                l_backward: l,
            })
            .collect(),
    }
}

/// Runs every job of a sweep grid; each job is a single-variant suite on its
/// own occlusion setting. Emits one summary CSV over all jobs.
pub fn run_sweep(
    env: &DeskEnv,
    grid: SweepGrid,
    cfg: &SuiteConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let jobs = sweep_plan(grid, 0.2, 0.2, cfg.sizes.l_forward);
    let mut text = String::from("label,variant,routing,best_step,iqm,ci_lo,ci_hi\n");
    for job in &jobs {
        let mut job_cfg = cfg.clone();
        job_cfg.runs = vec![(job.variant, job.routing)];
        job_cfg.include_oracle_baseline = false;
        job_cfg.sizes.l_forward = job.l_forward;
        job_cfg.sizes.l_backward = job.l_backward;
        let job_dir = out_dir.join(&job.label);
        let suite = failure_mode_suite(env, &job.occlusion, &job_cfg, &job_dir)?;
        for e in &suite.entries {
            text.push_str(&format!(
                "{},{},{},{},{:.9e},{:.9e},{:.9e}\n",
                job.label, e.variant, e.routing, e.best_step, e.iqm, e.ci_lo, e.ci_hi
            ));
        }
    }
    let summary = out_dir.join("sweep_summary.csv");
    std::fs::write(&summary, text)?;
    Ok(summary)
}

/// Rollout evaluation for the tabular gridworld models: greedy actions from
/// the learned critic, z inferred exactly from the reward vector under the
/// uniform state distribution.
pub fn evaluate_tabular_gridworld(
    zfb: &crate::bfm::tabular::TabularZFb,
    grid: &Gridworld,
    rollouts: usize,
    seed: u64,
) -> Result<Vec<(String, Vec<f64>)>> {
    let env = DeskEnv::Grid(grid.clone());
    let mdp = grid.to_finite_mdp();
    let mut out = Vec::new();
    for task in &grid.tasks {
        let rewards = mdp.reward(&task.task_id)?.to_vec();
        let z = zfb.infer_z(&rewards)?;
        let greedy = zfb.greedy_actions(&z);
        let mut returns = Vec::with_capacity(rollouts);
        for r in 0..rollouts {
            let mut rng =
                Rng::substream(seed, &format!("tab_rollout/{}", task.task_id), r as u64);
            let mut state = env.reset_with(&mut rng);
            let mut ret = 0.0;
            for _ in 0..grid.episode_length {
                let s_idx = grid.state_index(&state);
                let action = crate::envgen::Action::Discrete(greedy[s_idx]);
                let (next, rew, _) =
                    env.step(&state, &action, &DynamicsConfig::base(), &mut rng)?;
                let r_t = rew[&task.task_id];
                ret += r_t;
                state = next;
                if task.is_goal() && r_t >= 1.0 {
                    break;
                }
            }
            returns.push(ret);
        }
        out.push((task.task_id.clone(), returns));
    }
    Ok(out)
}
