use super::{shape_err, NnError, Real, Result, Tensor3};
use crate::rng::SplitMix64;

/// Fully connected layer over `(batch, 1, features)` input, optionally
/// followed by ReLU. Weights are `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub input: Tensor3<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    /// Uniform init in `±sqrt(6 / inputs)`, zero bias.
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize, relu: bool, rng: &mut SplitMix64) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(NnError::Config(format!("dense {inputs}->{outputs}")));
        }
        let bound = (6.0 / inputs as f64).sqrt();
        Ok(Self {
            name: name.into(),
            inputs,
            outputs,
            relu,
            weights: (0..inputs * outputs).map(|_| T::of(rng.uniform(-bound, bound))).collect(),
            bias: vec![T::zero(); outputs],
        })
    }

    fn check(&self, x: &Tensor3<T>) -> Result<()> {
        if x.length() != 1 || x.channels() != self.inputs {
            return shape_err(
                &self.name,
                format!("(batch, 1, {})", self.inputs),
                x.shape_string(),
            );
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check(x)?;
        let mut out = Tensor3::zeros(x.batch(), 1, self.outputs);
        for b in 0..x.batch() {
            let xi = x.item(b);
            for o in 0..self.outputs {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let mut acc = self.bias[o];
                for (w, v) in row.iter().zip(xi) {
                    acc = acc + *w * *v;
                }
                if self.relu {
                    acc = acc.max(T::zero());
                }
                out.data_mut()[b * self.outputs + o] = acc;
            }
        }
        Ok(out)
    }

    pub fn gradients(&self, x: &Tensor3<T>, out: &Tensor3<T>, grad_out: &Tensor3<T>) -> Result<DenseGrads<T>> {
        self.check(x)?;
        let expected = (x.batch(), 1, self.outputs);
        if grad_out.shape() != expected || out.shape() != expected {
            return shape_err(&self.name, format!("{expected:?} upstream gradient"), grad_out.shape_string());
        }
        let mut gx = Tensor3::zeros(x.batch(), 1, self.inputs);
        let mut gw = vec![T::zero(); self.weights.len()];
        let mut gb = vec![T::zero(); self.outputs];
        for b in 0..x.batch() {
            let xi = x.item(b);
            for o in 0..self.outputs {
                let idx = b * self.outputs + o;
                if self.relu && out.data()[idx] <= T::zero() {
                    continue;
                }
                let g = grad_out.data()[idx];
                gb[o] = gb[o] + g;
                let row = o * self.inputs;
                let gxi = &mut gx.data_mut()[b * self.inputs..(b + 1) * self.inputs];
                for i in 0..self.inputs {
                    gw[row + i] = gw[row + i] + g * xi[i];
                    gxi[i] = gxi[i] + g * self.weights[row + i];
                }
            }
        }
        Ok(DenseGrads {
            input: gx,
            weights: gw,
            bias: gb,
        })
    }
}
