use crate::error::{invalid, shape_err, Result};

/// Planar (CHW) RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return shape_err(format!(
                "{} values do not form a 3x{height}x{width} raster",
                data.len()
            ));
        }
        Ok(RgbRaster {
            width,
            height,
            data,
        })
    }

    pub fn uniform(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let plane = width * height;
        let mut data = Vec::with_capacity(3 * plane);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, plane));
        }
        RgbRaster {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        self.data[i] = rgb[0];
        self.data[plane + i] = rgb[1];
        self.data[2 * plane + i] = rgb[2];
    }
}

/// Standard RGB -> HSV; hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Separable Gaussian blur, kernel radius `ceil(3 sigma)`, edges clamped.
pub fn gaussian_blur(plane: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let mut tmp = vec![0.0f32; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0f64;
            for (i, k) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + i as isize - radius, width);
                acc += k * plane[y * width + sx] as f64;
            }
            tmp[y * width + x] = acc as f32;
        }
    }
    let mut out = vec![0.0f32; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0f64;
            for (i, k) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + i as isize - radius, height);
                acc += k * tmp[sy * width + x] as f64;
            }
            out[y * width + x] = acc as f32;
        }
    }
    out
}

/// Maximum of the Gaussian-blurred HSV saturation channel.
pub fn max_blurred_saturation(patch: &RgbRaster, blur_sigma: f64) -> Result<f32> {
    if patch.data.iter().any(|v| !v.is_finite()) {
        return invalid("patch contains non-finite pixel values");
    }
    let saturation: Vec<f32> = (0..patch.height)
        .flat_map(|y| (0..patch.width).map(move |x| (x, y)))
        .map(|(x, y)| rgb_to_hsv(patch.pixel(x, y))[1])
        .collect();
    let blurred = gaussian_blur(&saturation, patch.width, patch.height, blur_sigma);
    Ok(blurred.into_iter().fold(0.0f32, f32::max))
}

/// Keeps a patch iff its blurred saturation peaks at or above `threshold`
/// (a fraction of full saturation).
pub fn tissue_filter(patch: &RgbRaster, blur_sigma: f64, threshold: f64) -> Result<bool> {
    Ok(max_blurred_saturation(patch, blur_sigma)? as f64 >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn white_is_background() {
        let p = RgbRaster::uniform(128, 128, [1.0, 1.0, 1.0]);
        assert!(!tissue_filter(&p, 2.0, 0.10).unwrap());
    }

    #[test]
    fn pure_red_is_tissue() {
        let p = RgbRaster::uniform(128, 128, [1.0, 0.0, 0.0]);
        assert!(tissue_filter(&p, 2.0, 0.10).unwrap());
    }

    #[test]
    fn faint_saturation_is_background() {
        // s = (1 - 0.95) / 1 = 0.05
        let p = RgbRaster::uniform(128, 128, [1.0, 0.95, 0.95]);
        let s = max_blurred_saturation(&p, 2.0).unwrap();
        assert!((s - 0.05).abs() < 1e-6);
        assert!(!tissue_filter(&p, 2.0, 0.10).unwrap());
    }

    #[test]
    fn isolated_speck_is_blurred_away() {
        let mut p = RgbRaster::uniform(128, 128, [1.0, 1.0, 1.0]);
        p.set_pixel(60, 60, [1.0, 0.0, 0.0]);
        assert!(tissue_filter(&p, 0.0, 0.10).unwrap());
        assert!(!tissue_filter(&p, 2.0, 0.10).unwrap());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut p = RgbRaster::uniform(4, 4, [0.5, 0.5, 0.5]);
        p.data[3] = f32::NAN;
        assert!(tissue_filter(&p, 2.0, 0.1).is_err());
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [[0.2, 0.4, 0.9], [0.9, 0.1, 0.3], [0.5, 0.5, 0.5], [0.0, 0.7, 0.2]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn hue_rotation_leaves_filter_unchanged(
            seed_rgb in prop::collection::vec(0.0f32..1.0, 3 * 16 * 16),
            shift in 0.0f32..360.0,
        ) {
            let patch = RgbRaster::new(16, 16, seed_rgb).unwrap();
            let mut rotated = patch.clone();
            for y in 0..16 {
                for x in 0..16 {
                    let [h, s, v] = rgb_to_hsv(patch.pixel(x, y));
                    rotated.set_pixel(x, y, hsv_to_rgb([h + shift, s, v]));
                }
            }
            let a = max_blurred_saturation(&patch, 2.0).unwrap();
            let b = max_blurred_saturation(&rotated, 2.0).unwrap();
            prop_assert!((a - b).abs() < 1e-4);
            if (a - 0.10).abs() > 1e-3 {
                prop_assert_eq!(
                    tissue_filter(&patch, 2.0, 0.10).unwrap(),
                    tissue_filter(&rotated, 2.0, 0.10).unwrap()
                );
            }
        }
    }
}
