use std::collections::BTreeMap;

use crate::tensor::Tensor;

use super::config::OptimizerConfig;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplier on the learning rate of tensors under `motion.`.
    pub motion_lr_factor: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            motion_lr_factor: cfg.motion_lr_factor,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every tensor in `params` that has a gradient.
    pub fn update(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let lr = if name.starts_with("motion.") { lr * self.motion_lr_factor } else { lr };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((x, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr · sign(g).
        let mut p = BTreeMap::from([("w".to_string(), Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap())]);
        let g = BTreeMap::from([("w".to_string(), Tensor::from_vec(&[2], vec![0.3, -4.0]).unwrap())]);
        let mut adam = Adam::new(&OptimizerConfig::default());
        adam.update(&mut p, &g, 0.1);
        let d = p["w"].data();
        assert!((d[0] - 0.9).abs() < 1e-6 && (d[1] + 0.9).abs() < 1e-6, "{d:?}");
    }

    #[test]
    fn motion_tensors_take_the_scaled_rate() {
        let one = || Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut p = BTreeMap::from([("motion.sls.0.w".to_string(), one()), ("decoder.0.w".to_string(), one())]);
        let g: BTreeMap<_, _> = p.keys().map(|k| (k.clone(), Tensor::from_vec(&[1], vec![1.0]).unwrap())).collect();
        let cfg = OptimizerConfig {
            motion_lr_factor: 0.1,
            ..OptimizerConfig::default()
        };
        Adam::new(&cfg).update(&mut p, &g, 1.0);
        assert!((p["motion.sls.0.w"].data()[0] + 0.1).abs() < 1e-6);
        assert!((p["decoder.0.w"].data()[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = BTreeMap::from([("w".to_string(), Tensor::from_vec(&[1], vec![5.0]).unwrap())]);
        let mut adam = Adam::new(&OptimizerConfig::default());
        for _ in 0..2000 {
            let x = p["w"].data()[0];
            let g = BTreeMap::from([("w".to_string(), Tensor::from_vec(&[1], vec![2.0 * (x - 2.0)]).unwrap())]);
            adam.update(&mut p, &g, 0.05);
        }
        assert!((p["w"].data()[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = BTreeMap::from([("a".to_string(), Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap())]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].norm() - 1.0).abs() < 1e-12);
    }
}
