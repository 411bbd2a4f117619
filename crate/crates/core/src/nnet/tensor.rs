//! Dense 4-D tensors in NCHW layout.

use super::Scalar;

/// A dense (batch, channels, height, width) tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Tensor4 {
            shape,
            data: vec![T::ZERO; len],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "element count must equal the shape product"
        );
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut T {
        let [_, cs, hs, ws] = self.shape;
        &mut self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Contiguous (channels * height * width) block of one sample.
    pub fn sample(&self, n: usize) -> &[T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * stride..(n + 1) * stride]
    }

    /// Largest absolute element, 0 for empty tensors.
    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::ZERO, |acc, &v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies a single sample out as a batch-1 tensor.
    pub fn single(&self, n: usize) -> Tensor4<T> {
        let [_, c, h, w] = self.shape;
        Tensor4::from_vec([1, c, h, w], self.sample(n).to_vec())
    }

    /// Concatenates samples `range` into a new tensor.
    pub fn batch_slice(&self, start: usize, count: usize) -> Tensor4<T> {
        let [_, c, h, w] = self.shape;
        let stride = c * h * w;
        let data = self.data[start * stride..(start + count) * stride].to_vec();
        Tensor4::from_vec([count, c, h, w], data)
    }

    pub fn map<F: Fn(T) -> T>(&self, f: F) -> Tensor4<T> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
