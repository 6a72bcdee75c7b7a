//! Binary model checkpoint, little-endian throughout:
//!
//! ```text
//! magic            8 bytes "OSACKPT1"
//! seq_len, in_channels, num_classes, layer_count   4 x u64
//! per layer        u8 tag, then
//!                    1 conv:    filters, in_channels, kernel, stride (u64)
//!                    2 pool:    window, stride (u64)
//!                    3 flatten: nothing
//!                    4 dense:   inputs, outputs (u64), relu (u8)
//!                    5 dropout: keep (f64)
//!                  followed by a u16 name length and UTF-8 name
//! parameters       per conv/dense layer: weights then bias, each
//!                  u64 count + f32 values
//! optimizer        u8 flag; if 1: step (u64), lr, beta1, beta2, epsilon
//!                  (f64), then for each parameter tensor its first and
//!                  second moments as u64 count + f32 values
//! ```

use std::fs;
use std::path::Path;

use super::{Adam, AdamConfig, Conv1d, Dense, Dropout, Layer, MaxPool1d, Model, NnError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OSACKPT1";

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_blob(out: &mut Vec<u8>, v: &[f32]) {
    put_u64(out, v.len());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Model<f32>, adam: Option<&Adam<f32>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u64(&mut out, model.seq_len());
    put_u64(&mut out, model.in_channels());
    put_u64(&mut out, model.num_classes());
    let layers: Vec<_> = model.layers().collect();
    put_u64(&mut out, layers.len());
    for l in &layers {
        match l {
            Layer::Conv(c) => {
                out.push(1);
                for v in [c.filters, c.in_channels, c.kernel, c.stride] {
                    put_u64(&mut out, v);
                }
            }
            Layer::Pool(p) => {
                out.push(2);
                put_u64(&mut out, p.window);
                put_u64(&mut out, p.stride);
            }
            Layer::Flatten => out.push(3),
            Layer::Dense(d) => {
                out.push(4);
                put_u64(&mut out, d.inputs);
                put_u64(&mut out, d.outputs);
                out.push(d.relu as u8);
            }
            Layer::Dropout(d) => {
                out.push(5);
                out.extend_from_slice(&d.keep().to_le_bytes());
            }
        }
        let name = l.name().as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
    }
    for p in model.params() {
        put_blob(&mut out, p);
    }
    match adam {
        Some(a) => {
            out.push(1);
            put_u64(&mut out, a.step as usize);
            for v in [a.config.lr, a.config.beta1, a.config.beta2, a.config.epsilon] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let empty = Vec::new();
            for i in 0..model.params().len() {
                put_blob(&mut out, a.m.get(i).unwrap_or(&empty));
                put_blob(&mut out, a.v.get(i).unwrap_or(&empty));
            }
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(NnError::Checkpoint(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blob(&mut self, expected: Option<usize>) -> Result<Vec<f32>> {
        let n = self.u64()?;
        if let Some(e) = expected {
            if n != e {
                return Err(NnError::Checkpoint(format!("blob of {n} values, expected {e}")));
            }
        }
        let raw = self.take(n.checked_mul(4).ok_or_else(|| NnError::Checkpoint("blob size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model<f32>, Option<Adam<f32>>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let (seq_len, in_channels, num_classes, count) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    let mut descriptors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let tag = r.u8()?;
        let fields = match tag {
            1 => vec![r.u64()?, r.u64()?, r.u64()?, r.u64()?],
            2 => vec![r.u64()?, r.u64()?],
            3 => vec![],
            4 => vec![r.u64()?, r.u64()?, r.u8()? as usize],
            5 => vec![r.f64()?.to_bits() as usize],
            t => return Err(NnError::Checkpoint(format!("unknown layer tag {t}"))),
        };
        let nlen = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| NnError::Checkpoint("layer name is not UTF-8".into()))?;
        descriptors.push((tag, fields, name));
    }
    let mut layers = Vec::with_capacity(descriptors.len());
    for (tag, f, name) in descriptors {
        layers.push(match tag {
            1 => {
                let (filters, cin, kernel, stride) = (f[0], f[1], f[2], f[3]);
                if filters == 0 || cin == 0 || kernel == 0 || stride == 0 {
                    return Err(NnError::Checkpoint(format!("{name}: zero-sized conv")));
                }
                let weights = r.blob(Some(filters * cin * kernel))?;
                let bias = r.blob(Some(filters))?;
                Layer::Conv(Conv1d {
                    name,
                    filters,
                    in_channels: cin,
                    kernel,
                    stride,
                    weights,
                    bias,
                })
            }
            2 => Layer::Pool(MaxPool1d::new(name, f[0], f[1])?),
            3 => Layer::Flatten,
            4 => {
                let (inputs, outputs) = (f[0], f[1]);
                let weights = r.blob(Some(inputs * outputs))?;
                let bias = r.blob(Some(outputs))?;
                Layer::Dense(Dense {
                    name,
                    inputs,
                    outputs,
                    relu: f[2] != 0,
                    weights,
                    bias,
                })
            }
            _ => Layer::Dropout(Dropout::new(name, f64::from_bits(f[0] as u64))?),
        });
    }
    let model = Model::from_layers(layers, seq_len, in_channels, num_classes)?;
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()? as u64;
            let config = AdamConfig {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                epsilon: r.f64()?,
            };
            let mut a = Adam::new(config);
            a.step = step;
            for p in model.params() {
                let expect = (step > 0).then_some(p.len());
                a.m.push(r.blob(expect)?);
                a.v.push(r.blob(expect)?);
            }
            if step == 0 {
                a.m.clear();
                a.v.clear();
            }
            Some(a)
        }
        f => return Err(NnError::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((model, adam))
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &Model<f32>, adam: Option<&Adam<f32>>) -> Result<()> {
    fs::write(path, encode_checkpoint(model, adam))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, Option<Adam<f32>>)> {
    decode_checkpoint(&fs::read(path)?)
}
