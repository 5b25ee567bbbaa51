//! Adam optimizer with bias correction, operating on any [`ParamVisitor`].

use super::{ParamVisitor, Real};

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then the caller is
    /// expected to zero them. Parameter order defines the moment slots, so
    /// the same model must be passed on every call.
    pub fn step<M: ParamVisitor<T>>(&mut self, model: &mut M) {
        self.step_count += 1;
        if self.moments.is_empty() {
            model.visit_params(&mut |p| {
                self.moments
                    .push((vec![T::ZERO; p.len()], vec![T::ZERO; p.len()]));
            });
        }
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = T::from_f64(self.lr);
        let beta1 = T::from_f64(self.beta1);
        let beta2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let inv_bc1 = T::from_f64(1.0 / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(self.eps);
        let mut slot = 0usize;
        let moments = &mut self.moments;
        model.visit_params_mut(&mut |p| {
            let (m, v) = &mut moments[slot];
            slot += 1;
            debug_assert_eq!(m.len(), p.len(), "param order changed between steps");
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + one_m_b1 * g;
                v[i] = beta2 * v[i] + one_m_b2 * g * g;
                let m_hat = m[i] * inv_bc1;
                let v_hat = v[i] * inv_bc2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    struct Quad {
        p: Param<f64>,
    }

    impl ParamVisitor<f64> for Quad {
        fn visit_params(&self, f: &mut dyn FnMut(&Param<f64>)) {
            f(&self.p);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            f(&mut self.p);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        // L = sum(p^2) / 2, grad = p.
        let mut q = Quad {
            p: Param::filled("p", &[3], 5.0),
        };
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            q.p.grad = q.p.value.clone();
            opt.step(&mut q);
        }
        assert!(q.p.value.iter().all(|v| v.abs() < 1e-2), "{:?}", q.p.value);
    }

    #[test]
    fn zero_learning_rate_leaves_params_bitwise_unchanged() {
        let mut q = Quad {
            p: Param::filled("p", &[4], 1.25),
        };
        let before = q.p.value.clone();
        let mut opt = Adam::new(0.0);
        q.p.grad = vec![3.0; 4];
        opt.step(&mut q);
        assert_eq!(q.p.value, before);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // With bias correction, |first step| ~= lr regardless of grad scale.
        let mut q = Quad {
            p: Param::filled("p", &[1], 0.0),
        };
        q.p.grad = vec![1e-3];
        let mut opt = Adam::new(0.01);
        opt.step(&mut q);
        assert!((q.p.value[0].abs() - 0.01).abs() < 1e-4, "{}", q.p.value[0]);
    }
}
