//! The `fbm-lab` command-line entry point.
//!
//! Subcommands: `gen-data`, `train`, `eval`, `sweep`, `oracle-check`,
//! `report`. Every run loads an optional config file, applies flag overrides,
//! seeds all randomness from `--seed`, and writes a reproducibility manifest
//! next to its outputs. Exit codes: 0 success, 1 contract violation or
//! runtime failure, 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::bfm::{tabular::TabularZFb, BfmModel, Variant};
use crate::config::{dynamics_from_config, env_from_config, occlusion_from_config, Config};
use crate::data::{generate_dataset, BehaviourPolicy, OfflineDataset};
use crate::envgen::{DeskEnv, Routing};
use crate::error::{FbmError, Result};
use crate::evalkit::{
    self, evaluate_checkpoint, EvalConfig, EvalReport, NetSizes, SuiteConfig, SweepGrid,
};
use crate::oracle::{exact_successor_measure, deterministic_policy, value_iteration};
use crate::trainer::TrainConfig;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Reproducibility record written alongside every command's outputs.
#[derive(Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command_line: Vec<String>,
    pub resolved_config: BTreeMap<String, String>,
    pub seed: u64,
    pub schema_versions: BTreeMap<String, u32>,
    pub artifact_hashes: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
}

fn schema_versions() -> BTreeMap<String, u32> {
    let mut m = BTreeMap::new();
    m.insert("manifest".into(), MANIFEST_SCHEMA_VERSION);
    m.insert("dataset".into(), crate::data::DATASET_SCHEMA_VERSION);
    m.insert(
        "checkpoint".into(),
        crate::autodiff::checkpoint::CHECKPOINT_SCHEMA_VERSION,
    );
    m
}

fn write_manifest(
    path: &Path,
    args: &[String],
    cfg: &Config,
    seed: u64,
    artifacts: &[PathBuf],
    started: Instant,
) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for artifact in artifacts {
        if artifact.is_file() {
            let name = artifact
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_default();
            hashes.insert(name, crate::util::file_fingerprint(artifact)?);
        }
    }
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        command_line: args.to_vec(),
        resolved_config: cfg.resolved().clone(),
        seed,
        schema_versions: schema_versions(),
        artifact_hashes: hashes,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

struct Flags {
    values: BTreeMap<String, Vec<String>>,
}

impl Flags {
    fn get(&self, name: &str) -> Option<&str> {
        self.values
            .get(name)
            .and_then(|v| v.last())
            .map(|s| s.as_str())
    }

    fn get_all(&self, name: &str) -> Vec<&str> {
        self.values
            .get(name)
            .map(|v| v.iter().map(|s| s.as_str()).collect())
            .unwrap_or_default()
    }

    fn has(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    fn require(&self, name: &str) -> Result<&str> {
        self.get(name)
            .ok_or_else(|| FbmError::Usage(format!("missing required --{name}")))
    }
}

/// `spec` lists (flag name, takes_value). `--flag value` and `--flag=value`
/// both work; unknown flags are usage errors that list the valid set.
fn parse_flags(args: &[String], spec: &[(&str, bool)]) -> Result<Flags> {
    let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(stripped) = arg.strip_prefix("--") else {
            return Err(FbmError::Usage(format!(
                "unexpected positional argument '{arg}'"
            )));
        };
        let (name, inline) = match stripped.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (stripped, None),
        };
        let Some(&(_, takes_value)) = spec.iter().find(|(n, _)| *n == name) else {
            let valid: Vec<String> = spec.iter().map(|(n, _)| format!("--{n}")).collect();
            return Err(FbmError::Usage(format!(
                "unknown flag '--{name}'; valid flags: {}",
                valid.join(", ")
            )));
        };
        let value = if takes_value {
            match inline {
                Some(v) => v,
                None => {
                    i += 1;
                    args.get(i)
                        .cloned()
                        .ok_or_else(|| FbmError::Usage(format!("--{name} needs a value")))?
                }
            }
        } else {
            "true".to_string()
        };
        values.entry(name.to_string()).or_default().push(value);
        i += 1;
    }
    Ok(Flags { values })
}

const USAGE: &str = "fbm-lab: desk-scale zero-shot RL with behaviour foundation models

usage: fbm-lab <command> [flags]

commands:
  gen-data      collect a reward-free offline dataset
  train         train a model variant on a dataset
  eval          evaluate checkpoints: infer tasks, roll out, aggregate IQMs
  sweep         run a hyperparameter grid (pomdp | context-forward | context-backward)
  oracle-check  compare a tabular checkpoint against the exact successor measure
  report        render tables and plots from a completed run

run `fbm-lab <command> --help` for the flags of each command.
";

fn command_usage(cmd: &str) -> String {
    match cmd {
        "gen-data" => "usage: fbm-lab gen-data --out FILE [--config FILE] [--env gridworld|pointmass]\n  [--occlusion MODE] [--sigma S] [--p-flick P] [--dynamics-scale X]\n  [--behaviour uniform_random|ou_explore] [--episodes N] [--seed N]".into(),
        "train" => "usage: fbm-lab train --dataset FILE --out-dir DIR [--config FILE] [--variant fb|fb_m|fb_stack|usf_m]\n  [--routing R] [--seed N] [--steps N] [--batch N] [--lr X] [--paper-scale]".into(),
        "eval" => "usage: fbm-lab eval --checkpoint FILE [--checkpoint FILE ...] --dataset FILE --out DIR\n  [--config FILE] [--env E] [--occlusion MODE] [--sigma S] [--p-flick P]\n  [--dynamics-scale X] [--tasks a,b] [--rollouts N] [--seeds 0,1,2] [--labels-k N]".into(),
        "sweep" => "usage: fbm-lab sweep --grid pomdp|context-forward|context-backward --out DIR\n  [--config FILE] [--env E] [--seeds 0,1] [--episodes N] [--steps N] [--seed N]".into(),
        "oracle-check" => "usage: fbm-lab oracle-check --checkpoint FILE --out DIR [--config FILE] [--env gridworld]".into(),
        "report" => "usage: fbm-lab report --run-dir DIR --out DIR".into(),
        _ => USAGE.into(),
    }
}

/// Entry point used by the binary; maps errors to exit codes.
pub fn dispatch(args: &[String]) -> i32 {
    match run(args) {
        Ok(()) => 0,
        Err(FbmError::Usage(msg)) => {
            eprintln!("{msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(args: &[String]) -> Result<()> {
    let Some(cmd) = args.first() else {
        println!("{USAGE}");
        return Ok(());
    };
    if cmd == "--help" || cmd == "-h" || cmd == "help" {
        println!("{USAGE}");
        return Ok(());
    }
    let rest = &args[1..];
    if rest.iter().any(|a| a == "--help" || a == "-h") {
        println!("{}", command_usage(cmd));
        return Ok(());
    }
    match cmd.as_str() {
        "gen-data" => cmd_gen_data(args, rest),
        "train" => cmd_train(args, rest),
        "eval" => cmd_eval(args, rest),
        "sweep" => cmd_sweep(args, rest),
        "oracle-check" => cmd_oracle_check(args, rest),
        "report" => cmd_report(args, rest),
        other => Err(FbmError::Usage(format!(
            "unknown command '{other}'\n\n{USAGE}"
        ))),
    }
}

fn load_config(flags: &Flags) -> Result<Config> {
    match flags.get("config") {
        Some(path) => Config::load(Path::new(path)),
        None => Ok(Config::empty()),
    }
}

fn override_if(cfg: &mut Config, flags: &Flags, flag: &str, key: &str) {
    if let Some(v) = flags.get(flag) {
        cfg.set(key, v);
    }
}

fn cmd_gen_data(argv: &[String], rest: &[String]) -> Result<()> {
    let started = Instant::now();
    let flags = parse_flags(
        rest,
        &[
            ("config", true),
            ("env", true),
            ("occlusion", true),
            ("sigma", true),
            ("p-flick", true),
            ("dynamics-scale", true),
            ("behaviour", true),
            ("episodes", true),
            ("seed", true),
            ("out", true),
        ],
    )?;
    let out = PathBuf::from(flags.require("out")?);
    let mut cfg = load_config(&flags)?;
    override_if(&mut cfg, &flags, "env", "env.kind");
    override_if(&mut cfg, &flags, "occlusion", "occlusion.mode");
    override_if(&mut cfg, &flags, "sigma", "occlusion.sigma_noise");
    override_if(&mut cfg, &flags, "p-flick", "occlusion.p_flick");
    override_if(&mut cfg, &flags, "dynamics-scale", "dynamics.scale");
    override_if(&mut cfg, &flags, "behaviour", "data.behaviour");
    override_if(&mut cfg, &flags, "episodes", "data.episodes");
    override_if(&mut cfg, &flags, "seed", "seed");

    let env = env_from_config(&cfg)?;
    let occlusion = occlusion_from_config(&cfg)?;
    let dynamics = dynamics_from_config(&cfg)?;
    let behaviour = BehaviourPolicy::parse(cfg.get_or("data.behaviour", "ou_explore"))?;
    let episodes = cfg.get_usize("data.episodes", 100)?;
    let seed = cfg.get_u64("seed", 0)?;

    let dataset = generate_dataset(&env, behaviour, &occlusion, dynamics, episodes, seed)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    dataset.save(&out)?;
    println!(
        "wrote {} episodes ({} transitions) to {}",
        dataset.episodes.len(),
        dataset.transitions(),
        out.display()
    );
    let manifest_path = out.with_extension("manifest.json");
    write_manifest(&manifest_path, argv, &cfg, seed, &[out], started)
}

fn sizes_from_config(cfg: &Config, paper_scale: bool) -> Result<NetSizes> {
    let base = if paper_scale {
        NetSizes {
            d: 50,
            f_hidden: vec![1024, 1024],
            b_hidden: vec![512, 512],
            pi_hidden: vec![1024, 1024],
            preproc_dim: 512,
            embed_dim: 512,
            gru_hidden: 512,
            l_forward: 32,
            l_backward: 32,
        }
    } else {
        NetSizes::desk()
    };
    Ok(NetSizes {
        d: cfg.get_usize("model.d", base.d)?,
        gru_hidden: cfg.get_usize("model.gru_hidden", base.gru_hidden)?,
        preproc_dim: cfg.get_usize("model.preproc_dim", base.preproc_dim)?,
        embed_dim: cfg.get_usize("model.embed_dim", base.embed_dim)?,
        l_forward: cfg.get_usize("fb.context_length_forward", base.l_forward)?,
        l_backward: cfg.get_usize("fb.context_length_backward", base.l_backward)?,
        ..base
    })
}

fn train_config_from(cfg: &Config, seed: u64, paper_scale: bool) -> Result<TrainConfig> {
    let base = if paper_scale {
        TrainConfig::paper(seed)
    } else {
        TrainConfig::desk(seed)
    };
    Ok(TrainConfig {
        learning_steps: cfg.get_u64("train.learning_steps", base.learning_steps)?,
        batch: cfg.get_usize("train.batch", base.batch)?,
        lr: cfg.get_f64("train.lr", base.lr)?,
        gamma: cfg.get_f64("train.gamma", base.gamma)?,
        polyak_tau: cfg.get_f64("train.polyak_tau", base.polyak_tau)?,
        smooth_std: cfg.get_f64("train.smooth_std", base.smooth_std)?,
        smooth_clip: cfg.get_f64("train.smooth_clip", base.smooth_clip)?,
        z_mix: cfg.get_f64("train.z_mix", base.z_mix)?,
        checkpoint_every: cfg.get_u64("train.checkpoint_every", base.checkpoint_every)?,
        metrics_every: cfg.get_u64("train.metrics_every", base.metrics_every)?,
        seed,
        paper_scale,
    })
}

fn cmd_train(argv: &[String], rest: &[String]) -> Result<()> {
    let started = Instant::now();
    let flags = parse_flags(
        rest,
        &[
            ("config", true),
            ("variant", true),
            ("routing", true),
            ("dataset", true),
            ("seed", true),
            ("out-dir", true),
            ("paper-scale", false),
            ("steps", true),
            ("batch", true),
            ("lr", true),
        ],
    )?;
    let dataset_path = PathBuf::from(flags.require("dataset")?);
    let out_dir = PathBuf::from(flags.require("out-dir")?);
    let mut cfg = load_config(&flags)?;
    override_if(&mut cfg, &flags, "variant", "model.variant");
    override_if(&mut cfg, &flags, "routing", "model.routing");
    override_if(&mut cfg, &flags, "seed", "seed");
    override_if(&mut cfg, &flags, "steps", "train.learning_steps");
    override_if(&mut cfg, &flags, "batch", "train.batch");
    override_if(&mut cfg, &flags, "lr", "train.lr");
    if flags.has("paper-scale") {
        cfg.set("train.paper_scale", "true");
    }

    let dataset = OfflineDataset::load(&dataset_path)?;
    let seed = cfg.get_u64("seed", 0)?;
    let paper_scale = cfg.get_bool("train.paper_scale", false)?;
    let variant = Variant::parse(cfg.get_or("model.variant", "fb"))?;
    let routing = Routing::parse(
        cfg.get("model.routing")
            .or_else(|| cfg.get("occlusion.routing"))
            .unwrap_or("all"),
    )?;
    let sizes = sizes_from_config(&cfg, paper_scale)?;
    let train_cfg = train_config_from(&cfg, seed, paper_scale)?;

    let mut model_cfg = crate::bfm::ModelConfig::desk(
        variant,
        routing,
        dataset.obs_dim(),
        dataset.state_dim(),
        dataset.meta.action_space()?,
        train_cfg.gamma,
        seed,
    );
    model_cfg = sizes.apply(model_cfg);
    model_cfg.lambda_orth = cfg.get_f64("model.lambda_orth", 1.0)?;
    model_cfg.normalize_inferred_z = cfg.get_bool("model.normalize_inferred_z", false)?;
    let mut model = BfmModel::build(model_cfg)?;
    let outcome = crate::trainer::train(&mut model, &dataset, &train_cfg, &out_dir)?;
    println!(
        "trained {} for {} steps; final critic loss {:.6}; {} checkpoints in {}",
        variant.id(),
        train_cfg.learning_steps,
        outcome.final_critic_loss,
        outcome.checkpoints.len(),
        out_dir.display()
    );
    let mut artifacts = vec![outcome.metrics_path.clone()];
    artifacts.extend(outcome.checkpoints.iter().map(|(_, p)| p.clone()));
    write_manifest(
        &out_dir.join("manifest.json"),
        argv,
        &cfg,
        seed,
        &artifacts,
        started,
    )
}

fn cmd_eval(argv: &[String], rest: &[String]) -> Result<()> {
    let started = Instant::now();
    let flags = parse_flags(
        rest,
        &[
            ("config", true),
            ("checkpoint", true),
            ("dataset", true),
            ("env", true),
            ("occlusion", true),
            ("sigma", true),
            ("p-flick", true),
            ("dynamics-scale", true),
            ("tasks", true),
            ("rollouts", true),
            ("seeds", true),
            ("labels-k", true),
            ("out", true),
        ],
    )?;
    let checkpoints: Vec<PathBuf> = flags
        .get_all("checkpoint")
        .into_iter()
        .map(PathBuf::from)
        .collect();
    if checkpoints.is_empty() {
        return Err(FbmError::Usage("missing required --checkpoint".into()));
    }
    let dataset_path = PathBuf::from(flags.require("dataset")?);
    let out_dir = PathBuf::from(flags.require("out")?);
    let mut cfg = load_config(&flags)?;
    override_if(&mut cfg, &flags, "env", "env.kind");
    override_if(&mut cfg, &flags, "occlusion", "occlusion.mode");
    override_if(&mut cfg, &flags, "sigma", "occlusion.sigma_noise");
    override_if(&mut cfg, &flags, "p-flick", "occlusion.p_flick");
    override_if(&mut cfg, &flags, "dynamics-scale", "dynamics.scale");
    override_if(&mut cfg, &flags, "tasks", "eval.tasks");
    override_if(&mut cfg, &flags, "rollouts", "eval.rollouts");
    override_if(&mut cfg, &flags, "seeds", "eval.seeds");
    override_if(&mut cfg, &flags, "labels-k", "eval.labels_k");

    let mut env = env_from_config(&cfg)?;
    if let Some(filter) = cfg.get("eval.tasks") {
        let keep: Vec<&str> = filter.split(',').collect();
        let tasks = match &mut env {
            DeskEnv::Grid(e) => &mut e.tasks,
            DeskEnv::Point(e) => &mut e.tasks,
        };
        tasks.retain(|t| keep.contains(&t.task_id.as_str()));
        if tasks.is_empty() {
            return Err(FbmError::contract(format!(
                "task filter '{filter}' matches no tasks"
            )));
        }
    }
    let occlusion = occlusion_from_config(&cfg)?;
    let dynamics = dynamics_from_config(&cfg)?;
    let dataset = OfflineDataset::load(&dataset_path)?;
    let seeds: Vec<u64> = cfg
        .get_or("eval.seeds", "0")
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| FbmError::Config(format!("bad seed '{s}'")))
        })
        .collect::<Result<Vec<u64>>>()?;

    std::fs::create_dir_all(&out_dir)?;
    let mut report = EvalReport::default();
    for ckpt in &checkpoints {
        let (model, step) = BfmModel::load(ckpt)?;
        for &seed in &seeds {
            let eval_cfg = EvalConfig {
                rollouts: cfg.get_usize("eval.rollouts", 10)?,
                labels_k: cfg.get_usize("eval.labels_k", 1_000)?,
                bootstrap_resamples: cfg.get_usize("eval.bootstrap_resamples", 1_000)?,
                level: cfg.get_f64("eval.level", 0.95)?,
                seed,
            };
            report.push_rows(evaluate_checkpoint(
                &model, &env, &occlusion, &dynamics, &dataset, &eval_cfg, seed, step,
            )?);
        }
    }
    let rows_path = out_dir.join("eval_rows.csv");
    report.write_csv(&rows_path)?;
    println!("wrote {} evaluation rows to {}", report.rows.len(), rows_path.display());
    write_manifest(
        &out_dir.join("manifest.json"),
        argv,
        &cfg,
        *seeds.first().unwrap_or(&0),
        &[rows_path],
        started,
    )
}

fn cmd_sweep(argv: &[String], rest: &[String]) -> Result<()> {
    let started = Instant::now();
    let flags = parse_flags(
        rest,
        &[
            ("config", true),
            ("env", true),
            ("grid", true),
            ("seeds", true),
            ("episodes", true),
            ("steps", true),
            ("seed", true),
            ("out", true),
        ],
    )?;
    let grid = SweepGrid::parse(flags.require("grid")?)?;
    let out_dir = PathBuf::from(flags.require("out")?);
    let mut cfg = load_config(&flags)?;
    override_if(&mut cfg, &flags, "env", "env.kind");
    override_if(&mut cfg, &flags, "seeds", "eval.seeds");
    override_if(&mut cfg, &flags, "episodes", "data.episodes");
    override_if(&mut cfg, &flags, "steps", "train.learning_steps");
    override_if(&mut cfg, &flags, "seed", "seed");

    let env = env_from_config(&cfg)?;
    let seed = cfg.get_u64("seed", 0)?;
    let seeds: Vec<u64> = cfg
        .get_or("eval.seeds", "0,1,2")
        .split(',')
        .map(|s| s.trim().parse().unwrap_or(0))
        .collect();
    let mut train_cfg = train_config_from(&cfg, seed, false)?;
    train_cfg.learning_steps = cfg.get_u64("train.learning_steps", 4_000)?;
    train_cfg.checkpoint_every = cfg.get_u64("train.checkpoint_every", train_cfg.learning_steps)?;
    let suite = SuiteConfig {
        runs: vec![],
        seeds,
        data_episodes: cfg.get_usize("data.episodes", 60)?,
        data_seed: seed,
        behaviour: BehaviourPolicy::parse(cfg.get_or("data.behaviour", "ou_explore"))?,
        sizes: sizes_from_config(&cfg, false)?,
        train: train_cfg,
        eval: EvalConfig::desk(seed),
        include_oracle_baseline: false,
        normalize_inferred_z: cfg.get_bool("model.normalize_inferred_z", true)?,
    };
    let summary = evalkit::run_sweep(&env, grid, &suite, &out_dir)?;
    println!("sweep summary written to {}", summary.display());
    write_manifest(
        &out_dir.join("manifest.json"),
        argv,
        &cfg,
        seed,
        &[summary],
        started,
    )
}

fn cmd_oracle_check(argv: &[String], rest: &[String]) -> Result<()> {
    let started = Instant::now();
    let flags = parse_flags(
        rest,
        &[("config", true), ("checkpoint", true), ("env", true), ("out", true)],
    )?;
    let ckpt = PathBuf::from(flags.require("checkpoint")?);
    let out_dir = PathBuf::from(flags.require("out")?);
    let mut cfg = load_config(&flags)?;
    override_if(&mut cfg, &flags, "env", "env.kind");
    if cfg.get("env.kind").is_none() {
        cfg.set("env.kind", "gridworld");
    }
    let env = env_from_config(&cfg)?;
    let DeskEnv::Grid(grid) = &env else {
        return Err(FbmError::contract(
            "oracle-check runs on the gridworld environment",
        ));
    };
    let (zfb, step) = TabularZFb::load(&ckpt)?;
    let mdp = grid.to_finite_mdp();
    if zfb.n_states != mdp.n_states || zfb.n_actions != mdp.n_actions {
        return Err(FbmError::contract(format!(
            "checkpoint is for a {}x{} MDP, env has {}x{}",
            zfb.n_states, zfb.n_actions, mdp.n_states, mdp.n_actions
        )));
    }

    std::fs::create_dir_all(&out_dir)?;
    let mut text = String::from("task,m_mae,argmax_agreement\n");
    for task in &grid.tasks {
        let rewards = mdp.reward(&task.task_id)?.to_vec();
        let z = zfb.infer_z(&rewards)?;
        let greedy = zfb.greedy_actions(&z);
        let policy = deterministic_policy(&mdp, &greedy);
        let m_exact = exact_successor_measure(&mdp, &policy)?;
        let m_hat = zfb.m_hat(&z);
        let mae: f64 = m_exact
            .iter()
            .zip(&m_hat)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / m_exact.len() as f64;
        let vi = value_iteration(&mdp, &task.task_id, 1e-9)?;
        let agree = (0..mdp.n_states)
            .filter(|&s| vi.is_optimal_action(s, greedy[s], mdp.n_actions, 1e-9))
            .count() as f64
            / mdp.n_states as f64;
        text.push_str(&format!("{},{mae:.6e},{agree:.4}\n", task.task_id));
    }
    let report_path = out_dir.join("oracle_check.csv");
    std::fs::write(&report_path, text)?;
    println!(
        "oracle check of checkpoint at step {step} written to {}",
        report_path.display()
    );
    write_manifest(
        &out_dir.join("manifest.json"),
        argv,
        &cfg,
        0,
        &[report_path],
        started,
    )
}

fn cmd_report(argv: &[String], rest: &[String]) -> Result<()> {
    let started = Instant::now();
    let flags = parse_flags(rest, &[("run-dir", true), ("out", true)])?;
    let run_dir = PathBuf::from(flags.require("run-dir")?);
    let out_dir = PathBuf::from(flags.require("out")?);
    let rendered = evalkit::report::render_report(&run_dir, &out_dir)?;
    println!(
        "rendered {} and {}",
        rendered.table_path.display(),
        rendered.plot_path.display()
    );
    let cfg = Config::empty();
    write_manifest(
        &out_dir.join("manifest.json"),
        argv,
        &cfg,
        0,
        &[rendered.table_path, rendered.plot_path],
        started,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(args: &[&str]) -> Vec<String> {
        args.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(dispatch(&sv(&["--help"])), 0);
        assert_eq!(dispatch(&sv(&["eval", "--help"])), 0);
        assert_eq!(dispatch(&sv(&[])), 0);
    }

    #[test]
    fn unknown_command_is_usage_error() {
        assert_eq!(dispatch(&sv(&["frobnicate"])), 2);
    }

    #[test]
    fn missing_required_flag_names_it() {
        // train without --dataset
        let err = run(&sv(&["train", "--out-dir", "/tmp/x"])).unwrap_err();
        match err {
            FbmError::Usage(msg) => assert!(msg.contains("--dataset"), "{msg}"),
            other => panic!("expected usage error, got {other}"),
        }
        assert_eq!(dispatch(&sv(&["train", "--out-dir", "/tmp/x"])), 2);
    }

    #[test]
    fn unknown_flag_lists_valid_flags() {
        let err = run(&sv(&["report", "--bogus", "x"])).unwrap_err();
        match err {
            FbmError::Usage(msg) => {
                assert!(msg.contains("--bogus"));
                assert!(msg.contains("--run-dir"));
            }
            other => panic!("expected usage error, got {other}"),
        }
    }

    #[test]
    fn flag_overrides_beat_config_in_manifest() {
        let dir = std::env::temp_dir().join("fbm_cli_override");
        std::fs::create_dir_all(&dir).unwrap();
        let cfg_path = dir.join("exp.cfg");
        std::fs::write(&cfg_path, "[data]\nepisodes = 2\n[env]\nkind = gridworld\nepisode_length = 30\n").unwrap();
        let out = dir.join("ds.fbds");
        let code = dispatch(&sv(&[
            "gen-data",
            "--config",
            cfg_path.to_str().unwrap(),
            "--episodes",
            "3",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, 0);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("ds.manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["resolved_config"]["data.episodes"], "3");
        assert_eq!(manifest["seed"], 5);
        let ds = OfflineDataset::load(&out).unwrap();
        assert_eq!(ds.episodes.len(), 3);
        std::fs::remove_dir_all(&dir).ok();
    }
}
