//! Adam with per-coordinate learning rates.

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self::with_betas(n, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Returns the bias-corrected step to *add* to the parameters.
    /// `lr(i)` gives the learning rate of coordinate `i`.
    pub fn step(&mut self, grad: &[f64], lr: impl Fn(usize) -> f64) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                -lr(i) * m_hat / (v_hat.sqrt() + self.eps)
            })
            .collect()
    }
}

/// Cosine decay from `1` to `final_factor` over `total` steps.
pub fn cosine_factor(step: usize, total: usize, final_factor: f64) -> f64 {
    if total <= 1 {
        return 1.0;
    }
    let p = (step as f64 / (total - 1) as f64).min(1.0);
    final_factor + (1.0 - final_factor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}
