//! Adam with bias correction.

use std::collections::BTreeMap;

use super::nn::ParamSet;
use super::tensor::Tensor;

/// Standard Adam. Moments are kept per parameter name; parameters without a
/// gradient in a step are left untouched.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter present in `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for p in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.get(&p.name) else {
                continue;
            };
            assert_eq!(
                g.shape(),
                p.tensor.shape(),
                "gradient shape mismatch for '{}'",
                p.name
            );
            let m = self
                .m
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let v = self
                .v
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p.tensor.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::row_vector(vec![1.0, -2.0])).unwrap();
        let before = ps.tensor("w").clone();
        let mut adam = Adam::new(1e-4);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::zeros(1, 2));
        adam.step(&mut ps, &grads);
        assert_eq!(ps.tensor("w"), &before);
    }

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        // with zero moments, one step gives -lr * g/(|g| + eps) ~ -lr*sign(g)
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::row_vector(vec![0.0, 0.0])).unwrap();
        let lr = 1e-3;
        let mut adam = Adam::new(lr);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::row_vector(vec![2.5, -0.3]));
        adam.step(&mut ps, &grads);
        let w = ps.tensor("w");
        assert!((w.get(0, 0) + lr).abs() < 1e-6);
        assert!((w.get(0, 1) - lr).abs() < 1e-6);
    }

    #[test]
    fn non_trainable_parameters_are_skipped() {
        let mut ps = ParamSet::new();
        ps.add_frozen("t", Tensor::row_vector(vec![5.0])).unwrap();
        let mut adam = Adam::new(0.1);
        let mut grads = BTreeMap::new();
        grads.insert("t".to_string(), Tensor::row_vector(vec![1.0]));
        adam.step(&mut ps, &grads);
        assert_eq!(ps.tensor("t").get(0, 0), 5.0);
    }
}
