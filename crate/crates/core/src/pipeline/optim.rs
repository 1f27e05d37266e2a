use crate::autodiff::Parameter;

/// Adam with decoupled weight decay: each step first shrinks the weights by
/// `lr * weight_decay`, then applies the bias-corrected Adam update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[Parameter], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` from their current gradients.
    pub fn step(&mut self, params: &mut [Parameter], lr: f64) {
        assert_eq!(
            params.len(),
            self.m.len(),
            "optimizer built for a different parameter list"
        );
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.value[i] *= 1.0 - lr * self.weight_decay;
                p.value[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
