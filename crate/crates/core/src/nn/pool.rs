use super::{shape_err, NnError, Real, Result, Tensor3};

/// Max pooling over time, per channel, no padding.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool1d {
    pub name: String,
    pub window: usize,
    pub stride: usize,
    cache: Option<PoolCache>,
}

/// Flat input index of each output's maximum, plus the input shape.
#[derive(Debug, Clone, PartialEq)]
struct PoolCache {
    input_shape: (usize, usize, usize),
    output_shape: (usize, usize, usize),
    argmax: Vec<usize>,
}

impl MaxPool1d {
    pub fn new(name: impl Into<String>, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(NnError::Config(format!(
                "pool needs positive window and stride, got {window}/{stride}"
            )));
        }
        Ok(Self {
            name: name.into(),
            window,
            stride,
            cache: None,
        })
    }

    pub fn out_length(&self, length: usize) -> Result<usize> {
        if length < self.window {
            return Err(NnError::TooShort {
                layer: self.name.clone(),
                length,
                window: self.window,
            });
        }
        Ok((length - self.window) / self.stride + 1)
    }

    fn pool<T: Real>(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, Vec<usize>)> {
        let out_len = self.out_length(x.length())?;
        let (batch, _, ch) = x.shape();
        let mut out = Tensor3::zeros(batch, out_len, ch);
        let mut argmax = vec![0usize; batch * out_len * ch];
        for b in 0..batch {
            for t in 0..out_len {
                for c in 0..ch {
                    let mut best = x.offset(b, t * self.stride, c);
                    for j in 1..self.window {
                        let i = x.offset(b, t * self.stride + j, c);
                        // strict > keeps the lowest index on ties
                        if x.data()[i] > x.data()[best] {
                            best = i;
                        }
                    }
                    let o = out.offset(b, t, c);
                    out.data_mut()[o] = x.data()[best];
                    argmax[o] = best;
                }
            }
        }
        Ok((out, argmax))
    }

    /// Forward pass without touching the cache.
    pub fn infer<T: Real>(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        Ok(self.pool(x)?.0)
    }

    /// Forward pass that records argmax positions for [`Self::backward`].
    pub fn forward<T: Real>(&mut self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let (out, argmax) = self.pool(x)?;
        self.cache = Some(PoolCache {
            input_shape: x.shape(),
            output_shape: out.shape(),
            argmax,
        });
        Ok(out)
    }

    /// Route each upstream gradient to its cached argmax.
    pub fn backward<T: Real>(&self, grad_out: &Tensor3<T>) -> Result<Tensor3<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| NnError::NoForwardCache {
            layer: self.name.clone(),
        })?;
        if grad_out.shape() != cache.output_shape {
            return shape_err(&self.name, format!("{:?}", cache.output_shape), grad_out.shape_string());
        }
        let (b, l, c) = cache.input_shape;
        let mut gx = Tensor3::zeros(b, l, c);
        for (o, &i) in cache.argmax.iter().enumerate() {
            gx.data_mut()[i] = gx.data()[i] + grad_out.data()[o];
        }
        Ok(gx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
