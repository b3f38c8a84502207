//! Flat row-major tensors.
//!
//! The network engine works on plain `Vec<f64>` storage with an explicit
//! shape. Convolutional activations use NCHW order: batch, channel, then
//! the two spatial axes (time = H, frequency = W for our feature tensors).

use ndarray::ArrayView2;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// (N, C, H, W) of a 4-D tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.ndim(), 4, "expected 4-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    /// (rows, cols) of a 2-D tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.ndim(), 2, "expected 2-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Extracts a product as a row-major `Vec`. `dot` is free to return its
/// result in column-major layout (it does for outer products, where the
/// inner dimension is 1), and the raw buffer of such an array is the
/// transpose of the logical matrix — so copy through a logical-order
/// iterator unless the layout is already standard.
fn row_major_vec(c: ndarray::Array2<f64>) -> Vec<f64> {
    if c.is_standard_layout() {
        let (v, offset) = c.into_raw_vec_and_offset();
        debug_assert_eq!(offset, Some(0));
        v
    } else {
        c.iter().copied().collect()
    }
}

/// `out = a (m×k) · b (k×n)`, delegated to the BLAS-style kernel behind
/// ndarray so the convolution hot path stays fast.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let av = ArrayView2::from_shape((m, k), a).unwrap();
    let bv = ArrayView2::from_shape((k, n), b).unwrap();
    row_major_vec(av.dot(&bv))
}

/// `out = aᵀ (k×m transposed) · b (k×n)` without materializing the transpose.
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let av = ArrayView2::from_shape((k, m), a).unwrap();
    let bv = ArrayView2::from_shape((k, n), b).unwrap();
    row_major_vec(av.t().dot(&bv))
}

/// `out = a (m×k) · bᵀ (n×k transposed)`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let av = ArrayView2::from_shape((m, k), a).unwrap();
    let bv = ArrayView2::from_shape((n, k), b).unwrap();
    row_major_vec(av.dot(&bv.t()))
}
