use super::{shape_err, NnError, Real, Result, Tensor3};
use crate::rng::SplitMix64;

/// Valid 1D convolution followed by ReLU.
///
/// `out[b, t, k] = relu(bias[k] + sum_c sum_j w[k, c, j] * x[b, t*stride + j, c])`
/// with weights stored `filters x in_channels x kernel`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub name: String,
    pub filters: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dGrads<T> {
    pub input: Tensor3<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv1d<T> {
    /// He-style uniform init in `±sqrt(6 / (in_channels * kernel))`, zero bias.
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if in_channels == 0 || filters == 0 || kernel == 0 || stride == 0 {
            return Err(NnError::Config(format!(
                "conv needs positive sizes, got in={in_channels} filters={filters} kernel={kernel} stride={stride}"
            )));
        }
        let bound = (6.0 / (in_channels * kernel) as f64).sqrt();
        let weights = (0..filters * in_channels * kernel)
            .map(|_| T::of(rng.uniform(-bound, bound)))
            .collect();
        Ok(Self {
            name: name.into(),
            filters,
            in_channels,
            kernel,
            stride,
            weights,
            bias: vec![T::zero(); filters],
        })
    }

    #[inline]
    fn w(&self, k: usize, c: usize, j: usize) -> T {
        self.weights[(k * self.in_channels + c) * self.kernel + j]
    }

    pub fn out_length(&self, length: usize) -> Result<usize> {
        if length < self.kernel {
            return Err(NnError::TooShort {
                layer: self.name.clone(),
                length,
                window: self.kernel,
            });
        }
        Ok((length - self.kernel) / self.stride + 1)
    }

    fn check_input(&self, x: &Tensor3<T>) -> Result<usize> {
        if x.channels() != self.in_channels {
            return shape_err(
                &self.name,
                format!("{} channels", self.in_channels),
                format!("{} channels", x.channels()),
            );
        }
        self.out_length(x.length())
    }

    pub fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let out_len = self.check_input(x)?;
        let (batch, _, cin) = x.shape();
        let mut out = Tensor3::zeros(batch, out_len, self.filters);
        let data = x.data();
        for b in 0..batch {
            for t in 0..out_len {
                let base = x.offset(b, t * self.stride, 0);
                let window = &data[base..base + self.kernel * cin];
                for k in 0..self.filters {
                    let mut acc = self.bias[k];
                    for c in 0..cin {
                        let wrow = &self.weights[(k * cin + c) * self.kernel..][..self.kernel];
                        for (j, &w) in wrow.iter().enumerate() {
                            acc = acc + w * window[j * cin + c];
                        }
                    }
                    let o = out.offset(b, t, k);
                    out.data_mut()[o] = acc.max(T::zero());
                }
            }
        }
        Ok(out)
    }

    /// Gradients of the forward map given its input, its output (for the
    /// ReLU gate) and the upstream gradient.
    pub fn gradients(&self, x: &Tensor3<T>, out: &Tensor3<T>, grad_out: &Tensor3<T>) -> Result<Conv1dGrads<T>> {
        let out_len = self.check_input(x)?;
        let expected = (x.batch(), out_len, self.filters);
        if out.shape() != expected || grad_out.shape() != expected {
            return shape_err(
                &self.name,
                format!("{expected:?} upstream gradient"),
                grad_out.shape_string(),
            );
        }
        let (batch, _, cin) = x.shape();
        let mut gx = Tensor3::zeros(batch, x.length(), cin);
        let mut gw = vec![T::zero(); self.weights.len()];
        let mut gb = vec![T::zero(); self.filters];
        for b in 0..batch {
            for t in 0..out_len {
                let start = t * self.stride;
                for k in 0..self.filters {
                    if out.get(b, t, k) <= T::zero() {
                        continue;
                    }
                    let g = grad_out.get(b, t, k);
                    gb[k] = gb[k] + g;
                    for c in 0..cin {
                        for j in 0..self.kernel {
                            let xi = x.offset(b, start + j, c);
                            let wi = (k * cin + c) * self.kernel + j;
                            gw[wi] = gw[wi] + g * x.data()[xi];
                            gx.data_mut()[xi] = gx.data()[xi] + g * self.w(k, c, j);
                        }
                    }
                }
            }
        }
        Ok(Conv1dGrads {
            input: gx,
            weights: gw,
            bias: gb,
        })
    }
}
