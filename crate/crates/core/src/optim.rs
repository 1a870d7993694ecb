//! Adaptive-moment gradient descent on a single parameter vector.

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected step. `lr[k]` is the step size of parameter `k`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= lr[k] * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Step size for `epoch` of a stage lasting `total` epochs: halved after
/// each third.
pub fn step_schedule(base: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let third = (3 * epoch / total).min(2) as i32;
    base * 0.5f64.powi(third)
}
