use super::{NnError, Real, Result, Tensor3};
use crate::rng::SplitMix64;

/// Inverted dropout: in training each unit is kept with probability
/// `keep` and scaled by `1 / keep`; evaluation is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub name: String,
    keep: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(name: impl Into<String>, keep: f64) -> Result<Self> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(NnError::Config(format!("dropout keep probability {keep} not in (0, 1]")));
        }
        Ok(Self {
            name: name.into(),
            keep,
            mask: None,
        })
    }

    pub fn keep(&self) -> f64 {
        self.keep
    }

    pub fn set_keep(&mut self, keep: f64) -> Result<()> {
        *self = Self::new(std::mem::take(&mut self.name), keep)?;
        Ok(())
    }

    /// Training forward. Draws one uniform per unit from `rng`, except when
    /// `keep == 1`, which is an exact identity.
    pub fn forward_train<T: Real>(&mut self, x: &Tensor3<T>, rng: &mut SplitMix64) -> Tensor3<T> {
        if self.keep >= 1.0 {
            self.mask = None;
            return x.clone();
        }
        let scale = 1.0 / self.keep;
        let mask: Vec<f64> = (0..x.data().len())
            .map(|_| if rng.next_f64() < self.keep { scale } else { 0.0 })
            .collect();
        let mut out = x.clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v = *v * T::of(*m);
        }
        self.mask = Some(mask);
        out
    }

    /// Evaluation forward: identity. Clears any training mask so that a
    /// following backward is also the identity.
    pub fn forward_eval<T: Real>(&mut self, x: &Tensor3<T>) -> Tensor3<T> {
        self.mask = None;
        x.clone()
    }

    pub fn backward<T: Real>(&self, grad_out: &Tensor3<T>) -> Result<Tensor3<T>> {
        let Some(mask) = &self.mask else {
            return Ok(grad_out.clone());
        };
        if mask.len() != grad_out.data().len() {
            return super::shape_err(&self.name, format!("{} units", mask.len()), grad_out.shape_string());
        }
        let mut g = grad_out.clone();
        for (v, m) in g.data_mut().iter_mut().zip(mask) {
            *v = *v * T::of(*m);
        }
        Ok(g)
    }
}
