//! Parameter storage and layer building blocks.
//!
//! A [`ParamSet`] owns named tensors; models hold lightweight layer
//! descriptors ([`Linear`], [`Mlp`], [`GruCell`]) that know which names to
//! bind into a [`Graph`] for a forward pass. Binding decides per pass which
//! parameters are trainable, which is how target networks and frozen critics
//! are kept out of gradient flow.

use std::collections::BTreeMap;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{FbmError, Result};
use crate::rng::Rng;

/// A named tensor with a trainable flag.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        self.add_with(name, tensor, true)
    }

    pub fn add_frozen(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        self.add_with(name, tensor, false)
    }

    fn add_with(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(FbmError::contract(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            tensor,
            trainable,
        });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Parameter {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        &self.params[i]
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        &self.get(name).tensor
    }

    pub fn set_tensor(&mut self, name: &str, tensor: Tensor) {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        assert_eq!(
            self.params[i].tensor.shape(),
            tensor.shape(),
            "shape mismatch when setting '{name}'"
        );
        self.params[i].tensor = tensor;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar values.
    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Clones the parameters whose names start with any of the prefixes,
    /// marking the copies non-trainable. Used to build target networks.
    pub fn clone_subset_frozen(&self, prefixes: &[&str]) -> ParamSet {
        let mut out = ParamSet::new();
        for p in &self.params {
            if prefixes.iter().any(|pre| p.name.starts_with(pre)) {
                out.add_frozen(&p.name, p.tensor.clone()).unwrap();
            }
        }
        out
    }

    /// Inserts every parameter into the graph as a leaf. `trainable` decides
    /// per name whether gradients may flow into it this pass (a parameter
    /// whose own flag is false never receives gradients).
    pub fn bind(&self, g: &mut Graph, trainable: &dyn Fn(&str) -> bool) -> BoundParams {
        let mut vars = BTreeMap::new();
        for p in &self.params {
            let rg = p.trainable && trainable(&p.name);
            vars.insert(p.name.clone(), g.leaf(p.tensor.clone(), rg));
        }
        BoundParams { vars }
    }

    pub fn bind_all(&self, g: &mut Graph) -> BoundParams {
        self.bind(g, &|_| true)
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        self.bind(g, &|_| false)
    }
}

/// Graph handles for one bound [`ParamSet`].
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' is not bound"))
    }

    /// Pulls the gradients of every bound parameter that received one.
    pub fn collect_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, var) in &self.vars {
            if let Some(g) = grads.get(*var) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}

fn init_uniform(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.uniform_in(-bound, bound))
}

/// A fully connected layer: `x @ W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: String,
    pub b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Result<Linear> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        ps.add(&format!("{name}.w"), init_uniform(rng, in_dim, out_dim, bound))?;
        ps.add(&format!("{name}.b"), init_uniform(rng, 1, out_dim, bound))?;
        Ok(Linear {
            w: format!("{name}.w"),
            b: format!("{name}.b"),
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: Var) -> Var {
        let wx = g.matmul(x, bp.var(&self.w));
        g.add(wx, bp.var(&self.b))
    }
}

/// Activation applied to an MLP's final layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Tanh,
}

/// A feedforward network. When `first_layer_norm` is set, the first layer is
/// Linear -> RMS norm (learned gain) -> Tanh, standardising inputs; remaining
/// hidden layers use ReLU. A one-layer MLP with the norm enabled is the
/// "preprocessor" shape used throughout the model family.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    norm_gain: Option<String>,
    output: OutputActivation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Mlp {
    pub fn init(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        first_layer_norm: bool,
        output: OutputActivation,
        rng: &mut Rng,
    ) -> Result<Mlp> {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            layers.push(Linear::init(
                ps,
                &format!("{name}.l{i}"),
                dims[i],
                dims[i + 1],
                rng,
            )?);
        }
        let norm_gain = if first_layer_norm {
            let gain_name = format!("{name}.norm_gain");
            ps.add(&gain_name, Tensor::filled(1, dims[1], 1.0))?;
            Some(gain_name)
        } else {
            None
        };
        Ok(Mlp {
            layers,
            norm_gain,
            output,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, bp, h);
            if i == 0 {
                if let Some(gain) = &self.norm_gain {
                    h = g.rms_norm(h, bp.var(gain));
                    h = g.tanh(h);
                    continue;
                }
            }
            if i < last {
                h = g.relu(h);
            } else {
                match self.output {
                    OutputActivation::Linear => {}
                    OutputActivation::Tanh => h = g.tanh(h),
                }
            }
        }
        h
    }
}

/// A gated recurrent unit cell.
///
/// zg = sigmoid([h, x] Wz + bz), rg = sigmoid([h, x] Wr + br),
/// n = tanh([rg * h, x] Wn + bn), h' = (1 - zg) * n + zg * h.
#[derive(Clone, Debug)]
pub struct GruCell {
    wz: String,
    bz: String,
    wr: String,
    br: String,
    wn: String,
    bn: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn init(
        ps: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut Rng,
    ) -> Result<GruCell> {
        let cat = input_dim + hidden_dim;
        let bound = 1.0 / (cat as f64).sqrt();
        let mk = |gate: &str, ps: &mut ParamSet, rng: &mut Rng| -> Result<(String, String)> {
            let w = format!("{name}.w_{gate}");
            let b = format!("{name}.b_{gate}");
            ps.add(&w, init_uniform(rng, cat, hidden_dim, bound))?;
            ps.add(&b, init_uniform(rng, 1, hidden_dim, bound))?;
            Ok((w, b))
        };
        let (wz, bz) = mk("z", ps, rng)?;
        let (wr, br) = mk("r", ps, rng)?;
        let (wn, bn) = mk("n", ps, rng)?;
        Ok(GruCell {
            wz,
            bz,
            wr,
            br,
            wn,
            bn,
            input_dim,
            hidden_dim,
        })
    }

    /// One recurrent step: hidden NxH and input NxI to new hidden NxH.
    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, h: Var, x: Var) -> Var {
        let hx = g.concat_cols(&[h, x]);
        let z_lin = g.matmul(hx, bp.var(&self.wz));
        let z_lin = g.add(z_lin, bp.var(&self.bz));
        let zg = g.sigmoid(z_lin);
        let r_lin = g.matmul(hx, bp.var(&self.wr));
        let r_lin = g.add(r_lin, bp.var(&self.br));
        let rg = g.sigmoid(r_lin);
        let rh = g.mul(rg, h);
        let rx = g.concat_cols(&[rh, x]);
        let n_lin = g.matmul(rx, bp.var(&self.wn));
        let n_lin = g.add(n_lin, bp.var(&self.bn));
        let n = g.tanh(n_lin);
        // h' = n + zg * (h - n)
        let h_minus_n = g.sub(h, n);
        let gated = g.mul(zg, h_minus_n);
        g.add(n, gated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_parameter_names_rejected() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::zeros(2, 2)).unwrap();
        assert!(ps.add("w", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn gru_all_zero_weights_maps_zero_to_zero() {
        // sigma(0) = 0.5, tanh(0) = 0 -> h' = 0.5*0 + 0.5*0 = 0
        let mut ps = ParamSet::new();
        let mut rng = Rng::from_seed(0);
        let cell = GruCell::init(&mut ps, "gru", 3, 4, &mut rng).unwrap();
        for p in ps.iter_mut() {
            p.tensor = Tensor::zeros(p.tensor.rows(), p.tensor.cols());
        }
        let mut g = Graph::new();
        let bp = ps.bind_all(&mut g);
        let h = g.constant(Tensor::zeros(2, 4));
        let x = g.constant(Tensor::from_fn(2, 3, |r, c| (r + c) as f64));
        let h2 = cell.forward(&mut g, &bp, h, x);
        assert!(g.value(h2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_saturated_update_gate_copies_hidden() {
        // huge b_z forces zg ~= 1 so h' = h
        let mut ps = ParamSet::new();
        let mut rng = Rng::from_seed(1);
        let cell = GruCell::init(&mut ps, "gru", 2, 3, &mut rng).unwrap();
        ps.set_tensor("gru.b_z", Tensor::filled(1, 3, 50.0));
        let mut g = Graph::new();
        let bp = ps.bind_all(&mut g);
        let h0 = Tensor::from_vec(1, 3, vec![0.3, -0.2, 0.9]);
        let h = g.constant(h0.clone());
        let x = g.constant(Tensor::from_vec(1, 2, vec![1.0, -1.0]));
        let h2 = cell.forward(&mut g, &bp, h, x);
        for (a, b) in g.value(h2).data().iter().zip(h0.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn mlp_tanh_output_is_bounded() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::from_seed(2);
        let mlp = Mlp::init(
            &mut ps,
            "pi",
            4,
            &[8],
            2,
            true,
            OutputActivation::Tanh,
            &mut rng,
        )
        .unwrap();
        let mut g = Graph::new();
        let bp = ps.bind_all(&mut g);
        let x = g.constant(Tensor::from_fn(5, 4, |r, c| (r as f64 - c as f64) * 3.0));
        let y = mlp.forward(&mut g, &bp, x);
        assert!(g.value(y).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn clone_subset_frozen_takes_prefixes() {
        let mut ps = ParamSet::new();
        ps.add("f.w", Tensor::zeros(1, 1)).unwrap();
        ps.add("b.w", Tensor::zeros(1, 1)).unwrap();
        ps.add("pi.w", Tensor::zeros(1, 1)).unwrap();
        let t = ps.clone_subset_frozen(&["f.", "b."]);
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|p| !p.trainable));
    }
}
