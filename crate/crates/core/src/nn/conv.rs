use rand::Rng;

use super::param::{Module, Param};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// 2-D convolution, square kernel, zero padding, lowered to GEMM via im2col.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            weight: Param::he_normal(
                format!("{name}.weight"),
                vec![out_ch, in_ch, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Param::filled(format!("{name}.bias"), vec![out_ch], 0.0),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    /// 3x3, stride 1, size-preserving.
    pub fn same3<R: Rng>(name: &str, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Conv2d::new(name, in_ch, out_ch, 3, 1, 1, rng)
    }

    pub fn pointwise<R: Rng>(name: &str, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Conv2d::new(name, in_ch, out_ch, 1, 1, 0, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        let [_, c, h, w] = x.shape();
        if c != self.in_ch {
            return shape_err(format!(
                "{}: expected {} input channels, got {}",
                self.weight.name, self.in_ch, c
            ));
        }
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return shape_err(format!("{}: input {h}x{w} smaller than kernel", self.weight.name));
        }
        Ok(Geometry {
            c,
            h,
            w,
            ho: (h + 2 * self.pad - self.kernel) / self.stride + 1,
            wo: (w + 2 * self.pad - self.kernel) / self.stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let n = x.n();
        let rows = g.c * self.kernel * self.kernel;
        let pixels = g.ho * g.wo;
        let mut out = Tensor::zeros([n, self.out_ch, g.ho, g.wo]);
        let mut cols = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0f32; rows * pixels]
        };
        for i in 0..n {
            let b: &[f32] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), &g, &mut cols);
                &cols
            };
            let y = out.sample_mut(i);
            gemm(
                self.out_ch,
                rows,
                pixels,
                &self.weight.value,
                (rows as isize, 1),
                b,
                (pixels as isize, 1),
                y,
                0.0,
            );
            for (co, plane) in y.chunks_mut(pixels).enumerate() {
                let bias = self.bias.value[co];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    /// `x` must be the tensor passed to the matching forward call.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let n = x.n();
        if dy.shape() != [n, self.out_ch, g.ho, g.wo] {
            return shape_err(format!(
                "{}: output gradient {:?} does not match output shape",
                self.weight.name,
                dy.shape()
            ));
        }
        let rows = g.c * self.kernel * self.kernel;
        let pixels = g.ho * g.wo;
        let mut dx = Tensor::zeros(x.shape());
        let pointwise = self.is_pointwise();
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![0.0f32; rows * pixels]
        };
        let mut dcols = if pointwise {
            Vec::new()
        } else {
            vec![0.0f32; rows * pixels]
        };
        for i in 0..n {
            let dyi = dy.sample(i);
            for (co, plane) in dyi.chunks(pixels).enumerate() {
                self.bias.grad[co] += plane.iter().sum::<f32>();
            }
            let b: &[f32] = if pointwise {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), &g, &mut cols);
                &cols
            };
            // dW += dy . cols^T
            gemm(
                self.out_ch,
                pixels,
                rows,
                dyi,
                (pixels as isize, 1),
                b,
                (1, pixels as isize),
                &mut self.weight.grad,
                1.0,
            );
            // dcols = W^T . dy
            let target: &mut [f32] = if pointwise {
                dx.sample_mut(i)
            } else {
                &mut dcols
            };
            gemm(
                rows,
                self.out_ch,
                pixels,
                &self.weight.value,
                (1, rows as isize),
                dyi,
                (pixels as isize, 1),
                target,
                0.0,
            );
            if !pointwise {
                self.col2im(&dcols, &g, dx.sample_mut(i));
            }
        }
        Ok(dx)
    }

    fn im2col(&self, x: &[f32], g: &Geometry, cols: &mut [f32]) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.pad as isize);
        let pixels = g.ho * g.wo;
        for ci in 0..g.c {
            let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * pixels..(row + 1) * pixels];
                    for oy in 0..g.ho {
                        let iy = oy as isize * s + ky as isize - p;
                        let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize {
                            line.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            *v = if ix < 0 || ix >= g.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], g: &Geometry, dx: &mut [f32]) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.pad as isize);
        let pixels = g.ho * g.wo;
        for ci in 0..g.c {
            let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * pixels..(row + 1) * pixels];
                    for oy in 0..g.ho {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, v) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < g.w as isize {
                                line[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Row-major `c = a . b + beta * c` with explicit (row, col) strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index reachable through the given
    // strides, which describe either an m x k / k x n row-major buffer or its
    // transpose.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(conv: &Conv2d, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        let (k, s, p) = (conv.kernel, conv.stride, conv.pad as isize);
        let ho = (h + 2 * conv.pad - k) / s + 1;
        let wo = (w + 2 * conv.pad - k) / s + 1;
        let mut out = Tensor::zeros([n, conv.out_ch, ho, wo]);
        for i in 0..n {
            for co in 0..conv.out_ch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.value[co] as f64;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p;
                                    let ix = (ox * s + kx) as isize - p;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = conv.weight.value[((co * c + ci) * k + ky) * k + kx];
                                    let xv = x.data()
                                        [((i * c + ci) * h + iy as usize) * w + ix as usize];
                                    acc += (wv * xv) as f64;
                                }
                            }
                        }
                        out.data_mut()[((i * conv.out_ch + co) * ho + oy) * wo + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
            let conv = Conv2d::new("c", 3, 4, k, s, p, &mut rng);
            let x = random([2, 3, 6, 6], &mut rng);
            let fast = conv.forward(&x).unwrap();
            let slow = naive(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
            let mut conv = Conv2d::new("c", 2, 3, k, s, p, &mut rng);
            let x = random([2, 2, 4, 4], &mut rng);
            let y = conv.forward(&x).unwrap();
            let dy = random(y.shape(), &mut rng);
            // L = <y, dy>
            let loss = |conv: &Conv2d, x: &Tensor| -> f64 {
                let y = conv.forward(x).unwrap();
                y.data().iter().zip(dy.data()).map(|(a, b)| (a * b) as f64).sum()
            };
            let dx = conv.backward(&x, &dy).unwrap();
            let eps = 1e-2f32;
            for idx in [0, 5, 17, 31] {
                let mut xp = x.clone();
                xp.data_mut()[idx] += eps;
                let mut xm = x.clone();
                xm.data_mut()[idx] -= eps;
                let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps as f64);
                assert!((fd - dx.data()[idx] as f64).abs() < 1e-3, "dx {fd}");
            }
            for idx in 0..conv.weight.len().min(10) {
                let mut cp = conv.clone();
                cp.weight.value[idx] += eps;
                let mut cm = conv.clone();
                cm.weight.value[idx] -= eps;
                let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps as f64);
                assert!((fd - conv.weight.grad[idx] as f64).abs() < 1e-3, "dw {fd}");
            }
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::same3("c", 3, 4, &mut rng);
        assert!(conv.forward(&Tensor::zeros([1, 2, 4, 4])).is_err());
    }
}
