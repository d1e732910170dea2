//! Adaptive-moment-estimation optimizer over the trainable subset of a
//! model's parameters.
//!
//! The optimizer is decoupled from any one layer stack: callers hand it a
//! visitor that walks every parameter in a stable order, which lets a model
//! composed of several stacks (backbone plus head) share one optimizer.

use super::Param;

/// Walks every parameter of a model in a stable order.
pub type ParamVisitor<'a> = &'a mut dyn FnMut(&mut dyn FnMut(&mut Param));

pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    // First/second moment buffers, keyed by parameter visitation order.
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    pub fn zero_grads(&mut self, visit: ParamVisitor) {
        visit(&mut |p: &mut Param| p.zero_grad());
    }

    /// Apply one update using the gradients currently accumulated in the
    /// trainable parameters. Frozen parameters are left untouched (their
    /// moment slots stay empty).
    pub fn step(&mut self, visit: ParamVisitor) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let lr = self.learning_rate;
        let eps = self.eps;

        let moments = &mut self.moments;
        let mut index = 0usize;
        visit(&mut |p: &mut Param| {
            if moments.len() <= index {
                let len = if p.trainable { p.len() } else { 0 };
                moments.push((vec![0.0; len], vec![0.0; len]));
            }
            if p.trainable {
                let (m, v) = &mut moments[index];
                assert_eq!(m.len(), p.len(), "optimizer state shape drifted");
                for i in 0..p.data.len() {
                    let g = p.grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let m_hat = m[i] as f64 / bias1;
                    let v_hat = v[i] as f64 / bias2;
                    p.data[i] -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
                }
            }
            index += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Layer, Sequential, Tensor};
    use crate::rng::SplitMix64;

    #[test]
    fn adam_minimizes_quadratic() {
        // Fit y = 2x via a 1x1 dense layer under squared loss.
        let mut rng = SplitMix64::new(1);
        let mut net = Sequential::new(vec![Box::new(Dense::new("d", 1, 1, &mut rng))]);
        let mut opt = Adam::new(0.05);
        for _ in 0..400 {
            opt.zero_grads(&mut |f| net.for_each_param(f));
            let x = Tensor::from_vec(2, 1, 1, 1, vec![1.0, -2.0]);
            let y = net.forward(&x, true);
            let target = [2.0f32, -4.0];
            let dy = Tensor::from_vec(
                2,
                1,
                1,
                1,
                y.data.iter().zip(target).map(|(p, t)| p - t).collect(),
            );
            net.backward(&dy);
            opt.step(&mut |f| net.for_each_param(f));
        }
        let mut weight = 0.0;
        net.for_each_param_ref(&mut |p| {
            if p.name.ends_with(".weight") {
                weight = p.data[0];
            }
        });
        assert!((weight - 2.0).abs() < 0.05, "weight {weight}");
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut rng = SplitMix64::new(2);
        let mut net = Sequential::new(vec![Box::new(Dense::new("d", 2, 1, &mut rng))]);
        net.for_each_param(&mut |p| p.trainable = false);
        let before: Vec<f32> = {
            let mut v = Vec::new();
            net.for_each_param_ref(&mut |p| v.extend_from_slice(&p.data));
            v
        };
        let mut opt = Adam::new(0.1);
        for _ in 0..5 {
            opt.zero_grads(&mut |f| net.for_each_param(f));
            let x = Tensor::from_vec(1, 2, 1, 1, vec![1.0, 1.0]);
            let y = net.forward(&x, true);
            net.backward(&y);
            opt.step(&mut |f| net.for_each_param(f));
        }
        let after: Vec<f32> = {
            let mut v = Vec::new();
            net.for_each_param_ref(&mut |p| v.extend_from_slice(&p.data));
            v
        };
        assert_eq!(before, after);
    }
}
