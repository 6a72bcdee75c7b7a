use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the layers run on (`f32` or `f64`).
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Batch x length x channels, row-major with channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    batch: usize,
    length: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn new(batch: usize, length: usize, channels: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == batch * length * channels).then_some(Self {
            batch,
            length,
            channels,
            data,
        })
    }

    pub fn zeros(batch: usize, length: usize, channels: usize) -> Self {
        Self {
            batch,
            length,
            channels,
            data: vec![T::zero(); batch * length * channels],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.length, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, t: usize, c: usize) -> usize {
        (b * self.length + t) * self.channels + c
    }

    pub fn get(&self, b: usize, t: usize, c: usize) -> T {
        self.data[self.offset(b, t, c)]
    }

    /// One batch item as a `length * channels` slice.
    pub fn item(&self, b: usize) -> &[T] {
        let w = self.length * self.channels;
        &self.data[b * w..(b + 1) * w]
    }

    /// Same data viewed with a different (length, channels) split.
    pub fn reshaped(self, length: usize, channels: usize) -> Option<Self> {
        Self::new(self.batch, length, channels, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            batch: self.batch,
            length: self.length,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("({}, {}, {})", self.batch, self.length, self.channels)
    }
}
