//! Dense tensors and a reverse-mode autodiff tape.
//!
//! Images use the `(batch, channel, height, width)` layout throughout. All
//! arithmetic is double precision.

mod kernels;
mod tape;

pub use kernels::{conv_out_len, deconv_crop_offset};
pub use tape::{softmax_channels, Activation, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("{op}: invalid argument: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array of `f64` with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} holds {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Extents of a rank-4 tensor as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Shape {
                op: "dims4",
                detail: format!("expected rank 4, got {:?}", self.shape),
            }),
        }
    }

    /// Stack equally-shaped tensors along a new leading batch axis, or along
    /// the existing leading axis when they are already rank 4.
    pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or(TensorError::Invalid {
            op: "stack_batch",
            detail: "no tensors".into(),
        })?;
        let inner: Vec<usize> =
            if first.shape.len() == 4 { first.shape[1..].to_vec() } else { first.shape.clone() };
        let mut batch = 0;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            let (n, rest) = if t.shape.len() == 4 {
                (t.shape[0], &t.shape[1..])
            } else {
                (1, &t.shape[..])
            };
            if rest != inner.as_slice() {
                return Err(TensorError::Shape {
                    op: "stack_batch",
                    detail: format!("{:?} vs {:?}", t.shape, first.shape),
                });
            }
            batch += n;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&inner);
        Tensor::new(shape, data)
    }

    /// Slice batch item `i` of a rank-4 tensor, keeping a batch axis of one.
    pub fn batch_item(&self, i: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if i >= n {
            return Err(TensorError::Invalid {
                op: "batch_item",
                detail: format!("index {i} out of {n}"),
            });
        }
        let plane = c * h * w;
        Tensor::new(vec![1, c, h, w], self.data[i * plane..(i + 1) * plane].to_vec())
    }
}
