//! Bias-corrected Adam.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the step counter. Call once per optimisation step, before
    /// [`AdamState::update`] on the group's slices.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates `params[..]` in place from `grads`, using moment slots starting
    /// at `offset`. Lets one state cover a group split over several buffers.
    pub fn update(&mut self, offset: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient shapes differ");
        assert!(offset + params.len() <= self.first.len(), "moment buffer too small");
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let m = &mut self.first[offset..offset + params.len()];
        let v = &mut self.second[offset..offset + params.len()];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// One full step over a single contiguous group.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.begin_step();
        self.update(0, params, grads, lr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_untouched() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = [1.0, -2.0, 0.5];
        for _ in 0..5 {
            s.step(&mut p, &[0.0; 3], 0.1);
        }
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = [0.0, 0.0];
        s.step(&mut p, &[3.0, -0.02], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-8);
        assert!((p[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_parabola() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut x = [1.0];
        for _ in 0..100 {
            let g = [2.0 * x[0]];
            s.step(&mut x, &g, 0.1);
        }
        assert!(x[0].abs() < 0.05, "{}", x[0]);
    }

    #[test]
    fn split_buffers_match_a_single_buffer() {
        let cfg = AdamConfig::default();
        let mut whole = AdamState::new(4, cfg);
        let mut split = AdamState::new(4, cfg);
        let mut a = [0.1, 0.2, 0.3, 0.4];
        let (mut b1, mut b2) = ([0.1, 0.2], [0.3, 0.4]);
        for k in 0..3 {
            let g = [1.0 + k as f64, -0.5, 0.25, 2.0];
            whole.step(&mut a, &g, 0.01);
            split.begin_step();
            split.update(0, &mut b1, &g[..2], 0.01);
            split.update(2, &mut b2, &g[2..], 0.01);
        }
        assert_eq!(a[..2], b1);
        assert_eq!(a[2..], b2);
    }
}
