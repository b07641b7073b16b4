use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Bias-corrected Adam. Moments are allocated lazily on the first step so a
/// state can be built before the parameters it will drive.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParamStore) {
        if self.first.len() != params.len() {
            self.first = params.ids().map(|id| Tensor::zeros(params.value(id).shape())).collect();
            self.second = self.first.clone();
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for id in params.ids() {
            let g = params.grad(id).data().to_vec();
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let p = params.value_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn first_step_is_sign_step() {
        let mut s = one_param(1.0);
        let id = s.id("p").unwrap();
        s.grad_mut(id).data_mut()[0] = 0.37;
        let mut adam = Adam::new(AdamConfig::with_lr(0.001));
        adam.step(&mut s);
        let moved = 1.0 - s.value(id).item();
        assert!((moved - 0.001).abs() < 1e-9, "moved {moved}");
        assert_eq!(s.grad(id).item(), 0.0);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut s = one_param(0.25);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut s);
        assert_eq!(s.value(s.id("p").unwrap()).item(), 0.25);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn constant_gradient_steps_have_equal_size() {
        // With a constant gradient g, m_hat = g and v_hat = g^2 exactly at every
        // step, so each displacement is lr * |g| / (|g| + eps).
        let g = 2.0;
        let lr = 0.01;
        let expected = lr * g / (g + 1e-8);
        let mut s = one_param(0.0);
        let id = s.id("p").unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(lr));
        let mut last = 0.0;
        let mut moves = Vec::new();
        for _ in 0..2 {
            s.grad_mut(id).data_mut()[0] = g;
            adam.step(&mut s);
            let now = s.value(id).item();
            moves.push(last - now);
            last = now;
        }
        for m in &moves {
            assert!((m - expected).abs() / expected < 1e-9);
        }
        assert!((moves[0] - moves[1]).abs() / moves[0] < 0.01);
    }
}
