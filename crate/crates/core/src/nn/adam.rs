use super::{NnError, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates. Moments are allocated on the
/// first step to match the parameter tensors handed in.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over paired `(parameter, gradient)` slices. Gradients are
    /// checked for finiteness before anything is modified.
    pub fn step(&mut self, pairs: &mut [(&mut [T], &[T])]) -> Result<()> {
        for (i, (p, g)) in pairs.iter().enumerate() {
            if p.len() != g.len() {
                return Err(NnError::Shape {
                    layer: "adam".into(),
                    expected: format!("{} gradients for tensor {i}", p.len()),
                    actual: g.len().to_string(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient { tensor: i });
            }
        }
        if self.m.is_empty() {
            self.m = pairs.iter().map(|(p, _)| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != pairs.len() || self.m.iter().zip(pairs.iter()).any(|(m, (p, _))| m.len() != p.len()) {
            return Err(NnError::Shape {
                layer: "adam".into(),
                expected: format!("{} moment tensors", self.m.len()),
                actual: format!("{} parameter tensors", pairs.len()),
            });
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        let (lr, eps) = (T::of(c.lr), T::of(c.epsilon));

        for ((p, g), (m, v)) in pairs.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let m_hat = m[i] * inv_bc1;
                let v_hat = v[i] * inv_bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
