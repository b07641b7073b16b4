/// Running per-coordinate mean and variance of sampled gradients.
pub struct Moments {
    pub n: f64,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Moments { n: 0.0, sum: vec![0.0; dim], sq: vec![0.0; dim] }
    }

    pub fn push(&mut self, g: &[f64]) {
        self.n += 1.0;
        for (k, &x) in g.iter().enumerate() {
            self.sum[k] += x;
            self.sq[k] += x * x;
        }
    }

    pub fn mean(&self, k: usize) -> f64 {
        self.sum[k] / self.n
    }

    pub fn var(&self, k: usize) -> f64 {
        let m = self.mean(k);
        (self.sq[k] / self.n - m * m) * self.n / (self.n - 1.0)
    }
}

