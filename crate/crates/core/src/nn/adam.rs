//! Adam optimizer over flat parameter slices.

use crate::scalar::Scalar;

/// Adam with bias correction. State vectors are allocated lazily on the
/// first step and are aligned with the parameter slices passed in.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(learning_rate: F) -> Self {
        Self {
            learning_rate,
            beta1: F::from_f64_c(0.9),
            beta2: F::from_f64_c(0.999),
            epsilon: F::from_f64_c(1e-8),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update; `params` and `grads` must stay aligned call to call.
    pub fn step(&mut self, params: &mut [&mut [F]], grads: &[Vec<F>]) {
        assert_eq!(params.len(), grads.len(), "param/grad group mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![F::zero(); g.len()]).collect();
            self.v = grads.iter().map(|g| vec![F::zero(); g.len()]).collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), g.len(), "param/grad length mismatch");
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (F::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (F::one() - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        // f(x) = (x - 3)^2, gradient 2(x - 3).
        let mut x = vec![0.0f64];
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g = vec![2.0 * (x[0] - 3.0)];
            let mut slices: Vec<&mut [f64]> = vec![x.as_mut_slice()];
            opt.step(&mut slices, &[g]);
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn deterministic_across_instances() {
        let run = || {
            let mut x = vec![1.0f32, -2.0];
            let mut opt = Adam::new(0.01);
            for i in 0..50 {
                let g = vec![x[0] * 0.5 + i as f32 * 0.01, x[1]];
                let mut slices: Vec<&mut [f32]> = vec![x.as_mut_slice()];
                opt.step(&mut slices, &[g]);
            }
            x
        };
        assert_eq!(run(), run());
    }
}
