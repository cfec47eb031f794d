use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub fn relu_inplace(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient of ReLU given its output.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Flat index of the maximum of each pooling window.
pub struct PoolIndices {
    input_shape: [usize; 4],
    argmax: Vec<u32>,
}

/// 2x2 max pooling with stride 2. First maximum wins on ties.
pub fn max_pool2(x: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("max pooling needs even spatial dims, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = vec![0u32; n * c * ho * wo];
    let src = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = (plane * ho + oy) * wo + ox;
                out.data_mut()[o] = src[best];
                argmax[o] = best as u32;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: x.shape(),
            argmax,
        },
    ))
}

pub fn max_pool2_backward(idx: &PoolIndices, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(idx.input_shape);
    for (&i, &g) in idx.argmax.iter().zip(dy.data()) {
        dx.data_mut()[i as usize] += g;
    }
    dx
}

/// Source index pair and weight of the second sample for half-pixel-centred
/// bilinear x2 upsampling along one axis.
fn taps(out: usize, len: usize) -> (usize, usize, f32) {
    let src = ((out as f32 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f32)
}

/// Bilinear upsampling by a factor of 2 (half-pixel centres, edge clamped).
pub fn upsample2_bilinear(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let ys: Vec<_> = (0..ho).map(|o| taps(o, h)).collect();
    let xs: Vec<_> = (0..wo).map(|o| taps(o, w)).collect();
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * ho * wo..(plane + 1) * ho * wo];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                dst[oy * wo + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

pub fn upsample2_bilinear_backward(dy: &Tensor) -> Result<Tensor> {
    let [n, c, ho, wo] = dy.shape();
    if ho % 2 != 0 || wo % 2 != 0 {
        return shape_err("upsampling gradient must have even spatial dims");
    }
    let (h, w) = (ho / 2, wo / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    let ys: Vec<_> = (0..ho).map(|o| taps(o, h)).collect();
    let xs: Vec<_> = (0..wo).map(|o| taps(o, w)).collect();
    for plane in 0..n * c {
        let g = &dy.data()[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let v = g[oy * wo + ox];
                dst[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                dst[y0 * w + x1] += v * (1.0 - ly) * lx;
                dst[y1 * w + x0] += v * ly * (1.0 - lx);
                dst[y1 * w + x1] += v * ly * lx;
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_takes_window_max_on_ramp() {
        let x = Tensor::from_vec([1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let (y, _) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
        assert!(max_pool2(&Tensor::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn upsample_preserves_constants_and_doubles_size() {
        let x = Tensor::filled([1, 2, 3, 5], 0.25);
        let y = upsample2_bilinear(&x);
        assert_eq!(y.shape(), [1, 2, 6, 10]);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn upsample_backward_is_the_adjoint() {
        let x = Tensor::from_vec([1, 1, 3, 3], (0..9).map(|v| (v as f32).sin()).collect()).unwrap();
        let g = Tensor::from_vec([1, 1, 6, 6], (0..36).map(|v| (v as f32 * 0.7).cos()).collect())
            .unwrap();
        let lhs: f32 = upsample2_bilinear(&x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let dx = upsample2_bilinear_backward(&g).unwrap();
        let rhs: f32 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-5);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
