//! Reverse-mode gradients checked against central finite differences for a
//! small MLP and a GRU unrolled over 8 steps.
//!
//!     cargo run --release --example autodiff_gradcheck

use std::collections::BTreeMap;

use fbm_lab::autodiff::{Graph, Mlp, OutputActivation, ParamSet, Tensor};
use fbm_lab::memory::{MemoryEncoder, MemoryKind};
use fbm_lab::rng::Rng;

const H: f64 = 1e-5;

fn compare(
    params: &ParamSet,
    analytic: &BTreeMap<String, Tensor>,
    loss: &dyn Fn(&ParamSet) -> f64,
) -> f64 {
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for p in params.iter() {
        let base = p.tensor.clone();
        let ana = &analytic[&p.name];
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[i] += H;
            work.set_tensor(&p.name, plus);
            let up = loss(&work);
            let mut minus = base.clone();
            minus.data_mut()[i] -= H;
            work.set_tensor(&p.name, minus);
            let down = loss(&work);
            work.set_tensor(&p.name, base.clone());
            let fd = (up - down) / (2.0 * H);
            let a = ana.data()[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

fn main() -> fbm_lab::Result<()> {
    let mut rng = Rng::from_seed(5);

    // MLP with RMS-norm first layer and tanh output
    let mut ps = ParamSet::new();
    let mlp = Mlp::init(&mut ps, "net", 3, &[8], 2, true, OutputActivation::Tanh, &mut rng)?;
    let x = Tensor::from_fn(4, 3, |_, _| rng.normal());
    let mlp_loss = |p: &ParamSet| -> f64 {
        let mut g = Graph::new();
        let bp = p.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, &bp, xv);
        let sq = g.square(y);
        let l = g.mean_all(sq);
        g.value(l).item()
    };
    let analytic = {
        let mut g = Graph::new();
        let bp = ps.bind_all(&mut g);
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, &bp, xv);
        let sq = g.square(y);
        let l = g.mean_all(sq);
        let grads = g.backward(l)?;
        bp.collect_grads(&grads)
    };
    println!(
        "MLP: worst relative gradient error vs finite differences = {:.2e}",
        compare(&ps, &analytic, &mlp_loss)
    );

    // GRU trajectory encoder unrolled over 8 steps
    let mut ps_g = ParamSet::new();
    let enc = MemoryEncoder::init(&mut ps_g, "enc", MemoryKind::Gru, 3, 2, 6, 5, 8, &mut rng)?;
    let steps: Vec<(Tensor, Tensor)> = (0..8)
        .map(|_| {
            (
                Tensor::from_fn(2, 2, |_, _| rng.normal() * 0.5),
                Tensor::from_fn(2, 3, |_, _| rng.normal() * 0.5),
            )
        })
        .collect();
    let gru_loss = |p: &ParamSet| -> f64 {
        let mut g = Graph::new();
        let bp = p.bind_frozen(&mut g);
        let vars: Vec<_> = steps
            .iter()
            .map(|(a, o)| (g.constant(a.clone()), g.constant(o.clone())))
            .collect();
        let h = enc.encode_steps(&mut g, &bp, &vars);
        let sq = g.square(h);
        let l = g.sum_all(sq);
        g.value(l).item()
    };
    let analytic_g = {
        let mut g = Graph::new();
        let bp = ps_g.bind_all(&mut g);
        let vars: Vec<_> = steps
            .iter()
            .map(|(a, o)| (g.constant(a.clone()), g.constant(o.clone())))
            .collect();
        let h = enc.encode_steps(&mut g, &bp, &vars);
        let sq = g.square(h);
        let l = g.sum_all(sq);
        let grads = g.backward(l)?;
        bp.collect_grads(&grads)
    };
    println!(
        "GRU BPTT (L=8): worst relative gradient error = {:.2e}",
        compare(&ps_g, &analytic_g, &gru_loss)
    );
    Ok(())
}
