//! Scratch diagnostic: critic-greedy vs actor rollouts on vel tasks.
use fbm_lab::autodiff::{Graph, Tensor};
use fbm_lab::bfm::{BfmModel, Consumer};
use fbm_lab::data::{generate_dataset, BehaviourPolicy};
use fbm_lab::envgen::*;
use fbm_lab::evalkit::{model_config_for, NetSizes};
use fbm_lab::memory::TrajectoryBatch;
use fbm_lab::rng::Rng;
use fbm_lab::trainer::{train, TrainConfig};

fn main() -> fbm_lab::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8000);
    let seed = 7;
    let env = DeskEnv::Point(PointMass::new(200, 0.98, InitialDist::Uniform)?);
    let occl = OcclusionConfig::fully_observed();
    let dataset = generate_dataset(&env, BehaviourPolicy::ou_default(), &occl, DynamicsConfig::base(), 60, seed)?;
    let mut cfgm = model_config_for(&env, &occl, fbm_lab::bfm::Variant::Fb, Routing::None, &NetSizes::compact(), 0.98, seed);
    cfgm.normalize_inferred_z = true;
    let mut model = BfmModel::build(cfgm)?;
    let tc = TrainConfig { learning_steps: steps, batch: 64, lr: 1e-3, polyak_tau: 0.05, checkpoint_every: steps, ..TrainConfig::desk(seed) };
    train(&mut model, &dataset, &tc, &std::env::temp_dir().join("fbm_diag"))?;

    let task = &env.tasks()[4]; // vel_px
    let mut rng = Rng::stream(0, "labels");
    let labelled = dataset.build_labelled_set(task, 1000, model.cfg().l_backward, &mut rng)?;
    let z = model.infer_task(&labelled)?;
    println!("z(vel_px) = {:?}", z.z.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());

    let BfmModel::Fb(fb) = &model else { unreachable!() };
    // Q ranking at a rest state in the middle
    let state = vec![0.0, 0.0, 0.0, 0.0];
    let zt = Tensor::row_vector(z.z.clone());
    let window = dataset.window(0, 5, model.cfg().l_forward)?; // any window; replaced by state anyway? no: fully-observed fb uses obs stream = state values..
    // build a synthetic trajectory whose last obs is the probe state
    let mk_batch = |st: &Vec<f64>| {
        let l = model.cfg().l_forward;
        let mut obs = Tensor::zeros(l, 4);
        obs.row_mut(l-1).copy_from_slice(st);
        let acts = Tensor::zeros(l, 2);
        let mut valid = vec![false; l]; valid[l-1] = true;
        let tr = fbm_lab::memory::Trajectory::new(acts, obs, valid, Some(MarkovState::new(st.clone()))).unwrap();
        TrajectoryBatch::from_trajectories(&[tr]).unwrap()
    };
    let bt = mk_batch(&state);
    for ax in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let mut g = Graph::new();
        let bp = fb.params.bind_frozen(&mut g);
        let q = fb.q_values(&mut g, &bp, &bt, &Tensor::from_vec(1, 2, vec![ax, 0.0]), &zt)?;
        println!("Q(rest, a=({ax},0), z_velpx) = {:.3}", g.value(q).item());
    }
    // actor output at that state
    let mut agent = model.rollout_agent(&z);
    let a = agent.act(&state, &state)?;
    println!("pi(rest, z_velpx) = {:?}", a);

    // greedy-on-grid rollout vs actor rollout
    let grid: Vec<(f64,f64)> = vec![(-1.,-1.),(-1.,0.),(-1.,1.),(0.,-1.),(0.,0.),(0.,1.),(1.,-1.),(1.,0.),(1.,1.)];
    let mut ret_q = 0.0; let mut ret_pi = 0.0;
    for mode in 0..2 {
        let mut rng = Rng::stream(42, "diagroll");
        let mut st = env.reset_with(&mut rng);
        let mut agent = model.rollout_agent(&z);
        let mut total = 0.0;
        for _ in 0..200 {
            let action = if mode == 0 {
                let bt = mk_batch(&st.values);
                let mut best = (0usize, f64::NEG_INFINITY);
                for (i,(x,y)) in grid.iter().enumerate() {
                    let mut g = Graph::new();
                    let bp = fb.params.bind_frozen(&mut g);
                    let q = fb.q_values(&mut g, &bp, &bt, &Tensor::from_vec(1,2,vec![*x,*y]), &zt)?;
                    let v = g.value(q).item();
                    if v > best.1 { best = (i, v); }
                }
                Action::Continuous(vec![grid[best.0].0, grid[best.0].1])
            } else {
                agent.act(&st.values, &st.values)?
            };
            let (next, rew, _) = env.step(&st, &action, &DynamicsConfig::base(), &mut rng)?;
            total += rew[&task.task_id];
            st = next;
        }
        if mode == 0 { ret_q = total; } else { ret_pi = total; }
    }
    println!("vel_px return: Q-greedy grid = {ret_q:.1}, actor = {ret_pi:.1}");
    Ok(())
}
