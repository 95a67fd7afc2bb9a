//! Zero-shot task inference: the backward model turns reward-labelled
//! trajectory windows into task embeddings. Shows the estimator's exact
//! linearity in rewards and planted-task recovery for the ridge-regression
//! variant.
//!
//!     cargo run --release --example task_inference

use fbm_lab::bfm::{ridge_regression, BfmModel, Variant};
use fbm_lab::data::{generate_dataset, BehaviourPolicy, LabelledSample};
use fbm_lab::envgen::{
    DeskEnv, DynamicsConfig, InitialDist, OcclusionConfig, PointMass, Routing,
};
use fbm_lab::evalkit::{model_config_for, NetSizes};
use fbm_lab::autodiff::Tensor;
use fbm_lab::rng::Rng;

fn main() -> fbm_lab::Result<()> {
    let env = DeskEnv::Point(PointMass::new(100, 0.98, InitialDist::Uniform)?);
    let occl = OcclusionConfig::fully_observed();
    let dataset = generate_dataset(
        &env,
        BehaviourPolicy::ou_default(),
        &occl,
        DynamicsConfig::base(),
        20,
        3,
    )?;
    let cfg = model_config_for(
        &env,
        &occl,
        Variant::FbM,
        Routing::All,
        &NetSizes::compact(),
        0.98,
        3,
    );
    let d = cfg.d;
    let model = BfmModel::build(cfg)?;

    // sample labelled windows for a goal task
    let task = &env.tasks()[0];
    let mut rng = Rng::from_seed(9);
    let labelled = dataset.build_labelled_set(task, 800, 8, &mut rng)?;
    let z = model.infer_task(&labelled)?;
    let norm = z.z.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!(
        "inferred z for {}: norm {:.4} ({} positive labels of {})",
        task.task_id,
        norm,
        labelled.iter().filter(|s| s.reward > 0.0).count(),
        labelled.len()
    );

    // linearity: infer(a*r1 + b*r2) = a*infer(r1) + b*infer(r2), exactly
    let relabel = |rewards: &dyn Fn(usize) -> f64| -> Vec<LabelledSample> {
        labelled
            .iter()
            .enumerate()
            .map(|(i, s)| LabelledSample {
                trajectory: s.trajectory.clone(),
                reward: rewards(i),
            })
            .collect()
    };
    let r1 = |i: usize| (i as f64 * 0.37).sin();
    let r2 = |i: usize| (i as f64 * 0.11).cos();
    let (a, b) = (1.7, -0.4);
    let za = model.infer_task(&relabel(&r1))?;
    let zb = model.infer_task(&relabel(&r2))?;
    let zc = model.infer_task(&relabel(&|i| a * r1(i) + b * r2(i)))?;
    let max_dev = (0..d)
        .map(|j| (zc.z[j] - a * za.z[j] - b * zb.z[j]).abs())
        .fold(0.0f64, f64::max);
    println!("linearity deviation: {max_dev:.2e} (machine precision)");

    // the USF route: ridge regression recovers a planted task exactly on a
    // full-rank design
    let mut rng2 = Rng::from_seed(4);
    let phi = Tensor::from_fn(500, d, |_, _| rng2.normal());
    let z_star: Vec<f64> = (0..d).map(|j| (j as f64 * 0.81).sin()).collect();
    let rewards: Vec<f64> = (0..500)
        .map(|i| phi.row(i).iter().zip(&z_star).map(|(p, z)| p * z).sum())
        .collect();
    let z_hat = ridge_regression(&phi, &rewards, 1e-6)?;
    let err = z_hat
        .iter()
        .zip(&z_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("ridge recovery of a planted task: max error {err:.2e}");
    Ok(())
}
