use crate::transformer::Layout;

/// AdamW with decoupled weight decay on a flat `f64` parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    decay: Vec<bool>,
    t: u64,
}

impl AdamW {
    /// `decay[i]` selects the coordinates that receive weight decay.
    pub fn new(decay: Vec<bool>, weight_decay: f64) -> Self {
        let n = decay.len();
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            decay,
            t: 0,
        }
    }

    /// Decay applies to projection matrices only.
    pub fn for_layout(layout: &Layout, weight_decay: f64) -> Self {
        let mut decay = vec![false; layout.total()];
        for spec in layout.entries().iter().filter(|s| s.decay) {
            decay[spec.range()].fill(true);
        }
        Self::new(decay, weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let shrink = 1.0 - lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let update = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps);
            if self.decay[i] {
                params[i] *= shrink;
            }
            params[i] -= lr * update;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges() {
        let mut opt = AdamW::new(vec![false], 0.0);
        let mut w = [0.0];
        for _ in 0..3000 {
            let g = [2.0 * (w[0] - 3.0)];
            opt.step(&mut w, &g, 0.01);
        }
        assert!((w[0] - 3.0).abs() < 1e-3, "{}", w[0]);
    }

    #[test]
    fn zero_gradient_decay_is_multiplicative() {
        let mut opt = AdamW::new(vec![true, false], 0.1);
        let mut w = [2.0, 2.0];
        let lr = 0.05;
        let mut expected = 2.0;
        for _ in 0..10 {
            opt.step(&mut w, &[0.0, 0.0], lr);
            expected *= 1.0 - lr * 0.1;
            assert_eq!(w[0], expected);
            assert_eq!(w[1], 2.0);
        }
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut opt = AdamW::new(vec![true; 3], 0.1);
        let mut w = [1.0, -2.0, 0.5];
        opt.step(&mut w, &[0.3, -1.0, 4.0], 0.0);
        assert_eq!(w, [1.0, -2.0, 0.5]);
    }
}
