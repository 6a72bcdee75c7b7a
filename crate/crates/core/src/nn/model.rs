use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use serde::{Deserialize, Serialize};

use super::{shape_err, Conv1d, Dense, Dropout, MaxPool1d, NnError, Real, Result, Tensor3};
use crate::rng::SplitMix64;

/// Output length of a valid sliding window: `floor((len - window) / stride) + 1`.
pub fn out_length(length: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(NnError::Config(format!("window {window}, stride {stride}")));
    }
    if length < window {
        return Err(NnError::TooShort {
            layer: "window".into(),
            length,
            window,
        });
    }
    Ok((length - window) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv1d<T>),
    Pool(MaxPool1d),
    Flatten,
    Dense(Dense<T>),
    Dropout(Dropout),
}

impl<T: Real> Layer<T> {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv(l) => &l.name,
            Layer::Pool(l) => &l.name,
            Layer::Flatten => "flatten",
            Layer::Dense(l) => &l.name,
            Layer::Dropout(l) => &l.name,
        }
    }

    /// (length, channels) after this layer.
    pub fn output_shape(&self, length: usize, channels: usize) -> Result<(usize, usize)> {
        match self {
            Layer::Conv(c) => {
                if channels != c.in_channels {
                    return shape_err(&c.name, format!("{} channels", c.in_channels), format!("{channels} channels"));
                }
                Ok((c.out_length(length)?, c.filters))
            }
            Layer::Pool(p) => Ok((p.out_length(length)?, channels)),
            Layer::Flatten => Ok((1, length * channels)),
            Layer::Dense(d) => {
                if length != 1 || channels != d.inputs {
                    return shape_err(&d.name, format!("(1, {})", d.inputs), format!("({length}, {channels})"));
                }
                Ok((1, d.outputs))
            }
            Layer::Dropout(_) => Ok((length, channels)),
        }
    }

    fn cast<U: Real>(&self) -> Layer<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        match self {
            Layer::Conv(c) => Layer::Conv(Conv1d {
                name: c.name.clone(),
                filters: c.filters,
                in_channels: c.in_channels,
                kernel: c.kernel,
                stride: c.stride,
                weights: cv(&c.weights),
                bias: cv(&c.bias),
            }),
            Layer::Pool(p) => {
                let mut p = p.clone();
                p.clear_cache();
                Layer::Pool(p)
            }
            Layer::Flatten => Layer::Flatten,
            Layer::Dense(d) => Layer::Dense(Dense {
                name: d.name.clone(),
                inputs: d.inputs,
                outputs: d.outputs,
                relu: d.relu,
                weights: cv(&d.weights),
                bias: cv(&d.bias),
            }),
            Layer::Dropout(d) => Layer::Dropout(Dropout::new(d.name.clone(), d.keep()).expect("valid keep")),
        }
    }
}

/// One conv + pool stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

/// Conv/pool stages, then flatten -> dense(hidden, ReLU) -> dropout ->
/// dense(classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub blocks: Vec<ConvBlock>,
    pub hidden: usize,
    pub keep_prob: f64,
    pub num_classes: usize,
}

impl ArchSpec {
    /// Three blocks of 46/92/184 filters (kernels 10/10/20, stride 2),
    /// pools 10/2, 10/2, 20/5, hidden width 100, dropout keep 0.5.
    pub fn reference() -> Self {
        let block = |filters, kernel, pool_window, pool_stride| ConvBlock {
            filters,
            kernel,
            stride: 2,
            pool_window,
            pool_stride,
        };
        Self {
            blocks: vec![block(46, 10, 10, 2), block(92, 10, 10, 2), block(184, 20, 20, 5)],
            hidden: 100,
            keep_prob: 0.5,
            num_classes: 4,
        }
    }

    /// Same topology scaled down for short windows (a few hundred samples)
    /// and CPU-only training.
    pub fn desk() -> Self {
        let block = |filters, kernel| ConvBlock {
            filters,
            kernel,
            stride: 2,
            pool_window: 4,
            pool_stride: 2,
        };
        Self {
            blocks: vec![block(8, 7), block(16, 5), block(16, 5)],
            hidden: 32,
            keep_prob: 0.5,
            num_classes: 4,
        }
    }

    /// Length after each conv and pool layer, and the flatten width.
    pub fn length_chain(&self, seq_len: usize) -> Result<(Vec<usize>, usize)> {
        let mut lengths = Vec::with_capacity(2 * self.blocks.len());
        let mut len = seq_len;
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, window, stride) in [
                (format!("conv{}", i + 1), b.kernel, b.stride),
                (format!("pool{}", i + 1), b.pool_window, b.pool_stride),
            ] {
                len = out_length(len, window, stride).map_err(|e| match e {
                    NnError::TooShort { length, window, .. } => NnError::TooShort {
                        layer: name,
                        length,
                        window,
                    },
                    other => other,
                })?;
                lengths.push(len);
            }
        }
        let channels = self.blocks.last().map_or(0, |b| b.filters);
        Ok((lengths, len * channels))
    }

    pub fn build<T: Real>(&self, seq_len: usize, in_channels: usize, seed: u64) -> Result<Model<T>> {
        if self.blocks.is_empty() {
            return Err(NnError::Config("at least one conv block required".into()));
        }
        let (_, flat) = self.length_chain(seq_len)?;
        let mut rng = SplitMix64::new(seed);
        let mut layers = Vec::new();
        let mut ch = in_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            layers.push(Layer::Conv(Conv1d::new(
                format!("conv{}", i + 1),
                ch,
                b.filters,
                b.kernel,
                b.stride,
                &mut rng,
            )?));
            layers.push(Layer::Pool(MaxPool1d::new(
                format!("pool{}", i + 1),
                b.pool_window,
                b.pool_stride,
            )?));
            ch = b.filters;
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense(Dense::new("dense1", flat, self.hidden, true, &mut rng)?));
        layers.push(Layer::Dropout(Dropout::new("dropout", self.keep_prob)?));
        layers.push(Layer::Dense(Dense::new("dense2", self.hidden, self.num_classes, false, &mut rng)?));
        Model::from_layers(layers, seq_len, in_channels, self.num_classes)
    }
}

/// Model with the layer configuration from [`ArchSpec::reference`].
pub fn build_model(seq_len: usize, in_channels: usize, seed: u64) -> Result<Model<f32>> {
    ArchSpec::reference().build(seq_len, in_channels, seed)
}

#[derive(Debug, Clone, PartialEq)]
struct Slot<T> {
    layer: Layer<T>,
    input: Option<Tensor3<T>>,
    output: Option<Tensor3<T>>,
    input_shape: Option<(usize, usize, usize)>,
    grad_w: Vec<T>,
    grad_b: Vec<T>,
}

/// Fixed-topology layer stack with per-layer activation caches and
/// gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    slots: Vec<Slot<T>>,
    seq_len: usize,
    in_channels: usize,
    num_classes: usize,
}

impl<T: Real> Model<T> {
    /// Validate that the layers chain from `(seq_len, in_channels)` to a
    /// `num_classes`-wide output.
    pub fn from_layers(layers: Vec<Layer<T>>, seq_len: usize, in_channels: usize, num_classes: usize) -> Result<Self> {
        let (mut len, mut ch) = (seq_len, in_channels);
        for l in &layers {
            (len, ch) = l.output_shape(len, ch)?;
        }
        if (len, ch) != (1, num_classes) {
            return Err(NnError::Config(format!(
                "final layer produces ({len}, {ch}), expected (1, {num_classes})"
            )));
        }
        let slots = layers
            .into_iter()
            .map(|layer| {
                let (nw, nb) = match &layer {
                    Layer::Conv(c) => (c.weights.len(), c.bias.len()),
                    Layer::Dense(d) => (d.weights.len(), d.bias.len()),
                    _ => (0, 0),
                };
                Slot {
                    layer,
                    input: None,
                    output: None,
                    input_shape: None,
                    grad_w: vec![T::zero(); nw],
                    grad_b: vec![T::zero(); nb],
                }
            })
            .collect();
        Ok(Self {
            slots,
            seq_len,
            in_channels,
            num_classes,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.slots.iter().map(|s| &s.layer)
    }

    /// `(name, length, channels)` after each layer.
    pub fn layer_shapes(&self) -> Vec<(String, usize, usize)> {
        let (mut len, mut ch) = (self.seq_len, self.in_channels);
        self.layers()
            .map(|l| {
                (len, ch) = l.output_shape(len, ch).expect("validated at construction");
                (l.name().to_string(), len, ch)
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor3<T>) -> Result<()> {
        if x.length() != self.seq_len || x.channels() != self.in_channels {
            let first = self.slots.first().map_or("input", |s| s.layer.name());
            return shape_err(
                first,
                format!("(batch, {}, {})", self.seq_len, self.in_channels),
                x.shape_string(),
            );
        }
        Ok(())
    }

    /// Forward pass caching what backward needs. Dropout masks come from
    /// `rng` in [`Mode::Train`]; `rng` is untouched in [`Mode::Eval`].
    pub fn forward(&mut self, x: &Tensor3<T>, mode: Mode, rng: &mut SplitMix64) -> Result<Tensor3<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for slot in &mut self.slots {
            let next = match &mut slot.layer {
                Layer::Conv(c) => {
                    let y = c.forward(&cur)?;
                    slot.output = Some(y.clone());
                    slot.input = Some(cur);
                    y
                }
                Layer::Pool(p) => p.forward(&cur)?,
                Layer::Flatten => {
                    slot.input_shape = Some(cur.shape());
                    let w = cur.length() * cur.channels();
                    cur.reshaped(1, w).expect("same element count")
                }
                Layer::Dense(d) => {
                    let y = d.forward(&cur)?;
                    slot.output = Some(y.clone());
                    slot.input = Some(cur);
                    y
                }
                Layer::Dropout(d) => match mode {
                    Mode::Train => d.forward_train(&cur, rng),
                    Mode::Eval => d.forward_eval(&cur),
                },
            };
            cur = next;
        }
        Ok(cur)
    }

    /// Cache-free evaluation-mode forward pass; safe to call from many
    /// threads on a shared model.
    pub fn infer(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for slot in &self.slots {
            cur = match &slot.layer {
                Layer::Conv(c) => c.forward(&cur)?,
                Layer::Pool(p) => p.infer(&cur)?,
                Layer::Flatten => {
                    let w = cur.length() * cur.channels();
                    cur.reshaped(1, w).expect("same element count")
                }
                Layer::Dense(d) => d.forward(&cur)?,
                Layer::Dropout(_) => cur,
            };
        }
        Ok(cur)
    }

    /// Backpropagate `grad_logits` through the cached forward pass,
    /// accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, grad_logits: &Tensor3<T>) -> Result<Tensor3<T>> {
        let mut g = grad_logits.clone();
        for slot in self.slots.iter_mut().rev() {
            let no_cache = || NnError::NoForwardCache {
                layer: slot.layer.name().to_string(),
            };
            g = match &slot.layer {
                Layer::Conv(c) => {
                    let (x, y) = slot.input.as_ref().zip(slot.output.as_ref()).ok_or_else(no_cache)?;
                    let grads = c.gradients(x, y, &g)?;
                    accumulate(&mut slot.grad_w, &grads.weights);
                    accumulate(&mut slot.grad_b, &grads.bias);
                    grads.input
                }
                Layer::Pool(p) => p.backward(&g)?,
                Layer::Flatten => {
                    let (_, l, c) = slot.input_shape.ok_or_else(no_cache)?;
                    g.reshaped(l, c).ok_or_else(|| NnError::Shape {
                        layer: "flatten".into(),
                        expected: format!("{} features", l * c),
                        actual: "other".into(),
                    })?
                }
                Layer::Dense(d) => {
                    let (x, y) = slot.input.as_ref().zip(slot.output.as_ref()).ok_or_else(no_cache)?;
                    let grads = d.gradients(x, y, &g)?;
                    accumulate(&mut slot.grad_w, &grads.weights);
                    accumulate(&mut slot.grad_b, &grads.bias);
                    grads.input
                }
                Layer::Dropout(d) => d.backward(&g)?,
            };
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad_w.iter_mut().for_each(|v| *v = T::zero());
            s.grad_b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Parameter tensors in layer order: weights then bias per layer.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for s in &self.slots {
            match &s.layer {
                Layer::Conv(c) => out.extend([&c.weights[..], &c.bias[..]]),
                Layer::Dense(d) => out.extend([&d.weights[..], &d.bias[..]]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for s in &mut self.slots {
            match &mut s.layer {
                Layer::Conv(c) => out.extend([&mut c.weights[..], &mut c.bias[..]]),
                Layer::Dense(d) => out.extend([&mut d.weights[..], &mut d.bias[..]]),
                _ => {}
            }
        }
        out
    }

    /// Accumulated gradients, aligned with [`Self::params`].
    pub fn grads(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for s in &self.slots {
            if matches!(s.layer, Layer::Conv(_) | Layer::Dense(_)) {
                out.extend([&s.grad_w[..], &s.grad_b[..]]);
            }
        }
        out
    }

    /// Parameters paired with their gradients, for the optimizer.
    pub fn param_grad_pairs(&mut self) -> Vec<(&mut [T], &[T])> {
        let mut out = Vec::new();
        for s in &mut self.slots {
            let (w, b) = match &mut s.layer {
                Layer::Conv(c) => (&mut c.weights, &mut c.bias),
                Layer::Dense(d) => (&mut d.weights, &mut d.bias),
                _ => continue,
            };
            out.push((&mut w[..], &s.grad_w[..]));
            out.push((&mut b[..], &s.grad_b[..]));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn set_dropout_keep(&mut self, keep: f64) -> Result<()> {
        for s in &mut self.slots {
            if let Layer::Dropout(d) = &mut s.layer {
                d.set_keep(keep)?;
            }
        }
        Ok(())
    }

    /// Same architecture and parameter values in another float type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let layers = self.layers().map(Layer::cast).collect();
        Model::from_layers(layers, self.seq_len, self.in_channels, self.num_classes).expect("same topology")
    }

    /// Hash of every parameter's bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in self.params() {
            h.write_usize(p.len());
            for v in p {
                h.write_u64(v.f64().to_bits());
            }
        }
        h.finish()
    }
}

fn accumulate<T: Real>(acc: &mut [T], g: &[T]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a = *a + *v;
    }
}
