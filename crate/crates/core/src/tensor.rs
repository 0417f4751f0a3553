//! Dense 4-D tensors in (batch, channel, height, width) row-major layout.

use crate::error::{Error, Result};

/// A dense float64 tensor with shape `[batch, channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        assert!(
            shape.iter().all(|&d| d >= 1),
            "tensor dims must be >= 1, got {shape:?}"
        );
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "every dimension must be >= 1".into(),
            });
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("data length {} != {}", data.len(), expected),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(b, c, h, w)` at each index.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let [nb, nc, nh, nw] = shape;
        let mut i = 0;
        for b in 0..nb {
            for c in 0..nc {
                for h in 0..nh {
                    for w in 0..nw {
                        t.data[i] = f(b, c, h, w);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    /// Elements in one (height, width) plane.
    #[inline]
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }
    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(b, c, h, w)]
    }
    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(b, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous `(h, w)` plane for sample `b`, channel `c`.
    #[inline]
    pub fn plane_slice(&self, b: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let start = (b * self.shape[1] + c) * p;
        &self.data[start..start + p]
    }

    /// All channels of sample `b`.
    #[inline]
    pub fn sample_slice(&self, b: usize) -> &[f64] {
        let n = self.shape[1] * self.plane();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add", self.shape, other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Stacks single-sample tensors with identical (C, H, W) along the batch axis.
    pub fn stack(samples: &[&Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let mut shape = first.shape;
        let mut data = Vec::with_capacity(first.len() * samples.len());
        let mut total = 0;
        for s in samples {
            if s.shape[1..] != first.shape[1..] {
                return Err(Error::shape("stack", first.shape, s.shape));
            }
            data.extend_from_slice(&s.data);
            total += s.shape[0];
        }
        shape[0] = total;
        Tensor::from_vec(shape, data)
    }

    /// Extracts sample `b` as a batch-1 tensor.
    pub fn sample(&self, b: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        Tensor {
            shape: [1, c, h, w],
            data: self.sample_slice(b).to_vec(),
        }
    }
}
