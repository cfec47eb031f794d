//! Dense NCHW `f32` tensor used by the network code.

use crate::error::{shape_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return shape_err(format!(
                "{} values cannot fill a {:?} tensor ({} expected)",
                data.len(),
                shape,
                expected
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Stacks equally sized CHW samples into one batch.
    pub fn stack(samples: &[&[f32]], chw: [usize; 3]) -> Result<Self> {
        let per = chw[0] * chw[1] * chw[2];
        let mut data = Vec::with_capacity(per * samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.len() != per {
                return shape_err(format!(
                    "sample {i} has {} values, expected {per} for {:?}",
                    s.len(),
                    chw
                ));
            }
            data.extend_from_slice(s);
        }
        Ok(Tensor {
            shape: [samples.len(), chw[0], chw[1], chw[2]],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel-wise concatenation `[a, b]` of two tensors with equal N, H, W.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [n, ca, h, w] = a.shape;
        let [nb, cb, hb, wb] = b.shape;
        if n != nb || h != hb || w != wb {
            return shape_err(format!(
                "cannot concatenate {:?} with {:?} along channels",
                a.shape, b.shape
            ));
        }
        let mut out = Tensor::zeros([n, ca + cb, h, w]);
        for i in 0..n {
            let dst = out.sample_mut(i);
            let (left, right) = dst.split_at_mut(ca * h * w);
            left.copy_from_slice(a.sample(i));
            right.copy_from_slice(b.sample(i));
        }
        Ok(out)
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `first` channels and the rest.
    pub fn split_channels(&self, first: usize) -> (Tensor, Tensor) {
        let [n, c, h, w] = self.shape;
        assert!(first <= c);
        let mut a = Tensor::zeros([n, first, h, w]);
        let mut b = Tensor::zeros([n, c - first, h, w]);
        for i in 0..n {
            let src = self.sample(i);
            let (left, right) = src.split_at(first * h * w);
            a.sample_mut(i).copy_from_slice(left);
            b.sample_mut(i).copy_from_slice(right);
        }
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_restores_inputs() {
        let a = Tensor::from_vec([2, 1, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let b = Tensor::from_vec([2, 2, 2, 2], (0..16).map(|v| -(v as f32)).collect()).unwrap();
        let cat = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), [2, 3, 2, 2]);
        assert_eq!(&cat.sample(1)[..4], a.sample(1));
        let (a2, b2) = cat.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }
}
