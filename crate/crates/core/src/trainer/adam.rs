use serde::{Deserialize, Serialize};

/// Adam constants. `lr` is the base learning rate before scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// Dense bias-corrected Adam update at learning rate `lr`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], cfg: &AdamConfig, lr: f64) {
        self.step += 1;
        let (c1, c2) = self.corrections(cfg);
        for i in 0..params.len() {
            self.apply(i, params, grads[i], cfg, lr, c1, c2);
        }
    }

    pub(crate) fn corrections(&self, cfg: &AdamConfig) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
    }

    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn apply(
        &mut self,
        i: usize,
        params: &mut [f64],
        g: f64,
        cfg: &AdamConfig,
        lr: f64,
        c1: f64,
        c2: f64,
    ) {
        self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
        self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = self.m[i] / c1;
        let vhat = self.v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_normalized_gradient() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -4.0, 1e-3];
        let mut st = AdamState::new(3);
        st.update(&mut p, &g, &cfg, cfg.lr);
        let want = [1.0, -2.0, 0.5]
            .iter()
            .zip(&g)
            .map(|(p0, gi)| p0 - cfg.lr * gi / ((gi * gi).sqrt() + cfg.eps));
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
