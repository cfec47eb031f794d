//! Seeded synthetic H&E-like slides with annotated lesion blobs.

use std::f64::consts::TAU;

use image::RgbImage;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::labeling::BinaryMask;
use super::PATCH_SIZE;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub tissue_rgb: [f32; 3],
    pub lesion_rgb: [f32; 3],
    pub nucleus_rgb: [f32; 3],
    /// Fraction of tissue area covered by nuclei.
    pub tissue_nuclei_density: f64,
    pub lesion_nuclei_density: f64,
    /// Per-pixel Gaussian noise standard deviation.
    pub noise_std: f32,
    /// Per-channel multiplicative stain shift (center-specific color statistics).
    pub stain_gain: [f32; 3],
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            tissue_rgb: [0.92, 0.66, 0.82],
            lesion_rgb: [0.62, 0.36, 0.74],
            nucleus_rgb: [0.42, 0.26, 0.62],
            tissue_nuclei_density: 0.03,
            lesion_nuclei_density: 0.10,
            noise_std: 0.015,
            stain_gain: [1.0, 1.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub count: usize,
    pub radius_range: (f64, f64),
    pub texture: TextureParams,
}

impl Default for LesionSpec {
    fn default() -> Self {
        LesionSpec {
            count: 2,
            radius_range: (40.0, 70.0),
            texture: TextureParams::default(),
        }
    }
}

pub struct SyntheticSlide {
    pub image: RgbImage,
    pub mask: BinaryMask,
}

/// Radial wobble of lesion outlines: r(t) = r * (1 + WOBBLE * sin(3t + phase)).
const WOBBLE: f64 = 0.12;

struct Blob {
    cx: f64,
    cy: f64,
    r: f64,
    phase: f64,
}

impl Blob {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let d = (dx * dx + dy * dy).sqrt();
        let t = dy.atan2(dx);
        d <= self.r * (1.0 + WOBBLE * (3.0 * t + self.phase).sin())
    }
}

/// Elliptical tissue region with a wavy outline, centred in the slide so the
/// corners stay blank.
struct TissueRegion {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    waves: [(f64, f64, f64); 2],
}

impl TissueRegion {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = ((x - self.cx) / self.ax, (y - self.cy) / self.ay);
        let t = v.atan2(u);
        let edge = 1.0
            + self
                .waves
                .iter()
                .map(|&(amp, freq, phase)| amp * (freq * t + phase).sin())
                .sum::<f64>();
        (u * u + v * v).sqrt() <= edge
    }
}

/// Generates an RGB slide and its lesion mask. Identical seeds give
/// bit-identical output; the mask marks exactly `lesion.count` disjoint blobs,
/// all inside tissue.
pub fn generate_synthetic_slide(
    seed: u64,
    dims: (usize, usize),
    lesion: &LesionSpec,
) -> Result<SyntheticSlide> {
    let (width, height) = dims;
    if width < PATCH_SIZE || height < PATCH_SIZE || width % PATCH_SIZE != 0 || height % PATCH_SIZE != 0
    {
        return invalid(format!(
            "slide dims {width}x{height} are not a multiple of {PATCH_SIZE}"
        ));
    }
    let (r_lo, r_hi) = lesion.radius_range;
    if !(r_lo > 0.0 && r_lo <= r_hi) {
        return invalid(format!("bad lesion radius range {:?}", lesion.radius_range));
    }
    let max_extent = 2.0 * r_hi * (1.0 + WOBBLE);
    if lesion.count > 0 && max_extent >= width.min(height) as f64 {
        return invalid(format!(
            "lesion radius {r_hi} does not fit a {width}x{height} slide"
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let tissue = TissueRegion {
        cx: w * rng.random_range(0.46..0.54),
        cy: h * rng.random_range(0.46..0.54),
        ax: w * rng.random_range(0.30..0.36),
        ay: h * rng.random_range(0.30..0.36),
        waves: [
            (rng.random_range(0.02..0.06), 3.0, rng.random_range(0.0..TAU)),
            (rng.random_range(0.01..0.04), 5.0, rng.random_range(0.0..TAU)),
        ],
    };

    let mut blobs: Vec<Blob> = Vec::with_capacity(lesion.count);
    let mut attempts = 0;
    while blobs.len() < lesion.count {
        attempts += 1;
        if attempts > 20_000 {
            return Err(Error::InvalidInput(format!(
                "could not place {} disjoint lesions of radius {:?} inside the tissue",
                lesion.count, lesion.radius_range
            )));
        }
        let r = rng.random_range(r_lo..=r_hi);
        let reach = r * (1.0 + WOBBLE);
        let cx = rng.random_range(reach..w - reach);
        let cy = rng.random_range(reach..h - reach);
        // The whole blob must sit inside tissue: check its bounding circle.
        let inside = (0..16).all(|i| {
            let t = i as f64 * std::f64::consts::TAU / 16.0;
            tissue.contains(cx + reach * t.cos(), cy + reach * t.sin())
        }) && tissue.contains(cx, cy);
        let clear = blobs.iter().all(|b| {
            let d = ((b.cx - cx).powi(2) + (b.cy - cy).powi(2)).sqrt();
            d > b.r * (1.0 + WOBBLE) + reach + 3.0
        });
        if inside && clear {
            blobs.push(Blob {
                cx,
                cy,
                r,
                phase: rng.random_range(0.0..TAU),
            });
        }
    }

    let mut mask = BinaryMask::zeros(width, height);
    let mut in_tissue = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            in_tissue[y * width + x] = tissue.contains(fx, fy);
            if blobs.iter().any(|b| b.contains(fx, fy)) {
                mask.set(x, y, true);
            }
        }
    }

    let tex = &lesion.texture;
    let mut nucleus = vec![false; width * height];
    paint_nuclei(&mut rng, &mut nucleus, width, height, |i| {
        in_tissue[i] && mask.data[i] == 0
    }, tex.tissue_nuclei_density, 2.0);
    paint_nuclei(&mut rng, &mut nucleus, width, height, |i| mask.data[i] != 0,
        tex.lesion_nuclei_density, 3.0);

    // Low-frequency shading shared by all tissue.
    let shade: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.005..0.02),
                rng.random_range(0.005..0.02),
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    let noise = Normal::new(0.0f32, tex.noise_std.max(0.0)).unwrap();
    let mut image = RgbImage::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let mut rgb = if !in_tissue[i] {
                [0.97, 0.97, 0.97]
            } else if nucleus[i] {
                tex.nucleus_rgb
            } else if mask.data[i] != 0 {
                tex.lesion_rgb
            } else {
                tex.tissue_rgb
            };
            if in_tissue[i] {
                let s: f64 = shade
                    .iter()
                    .map(|&(fx, fy, p)| (fx * x as f64 + fy * y as f64 + p).sin())
                    .sum::<f64>()
                    * 0.012;
                for (c, v) in rgb.iter_mut().enumerate() {
                    *v = (*v + s as f32) * tex.stain_gain[c];
                }
            }
            let px = rgb.map(|v| {
                let v = v + noise.sample(&mut rng);
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            });
            image.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(SyntheticSlide { image, mask })
}

fn paint_nuclei(
    rng: &mut ChaCha8Rng,
    nucleus: &mut [bool],
    width: usize,
    height: usize,
    eligible: impl Fn(usize) -> bool,
    density: f64,
    radius: f64,
) {
    let area = (0..width * height).filter(|&i| eligible(i)).count() as f64;
    let count = (density * area / (std::f64::consts::PI * radius * radius)).round() as usize;
    let reach = radius.ceil() as isize;
    let mut placed = 0;
    let mut tries = 0;
    while placed < count && tries < 50 * count + 100 {
        tries += 1;
        let cx = rng.random_range(0..width) as isize;
        let cy = rng.random_range(0..height) as isize;
        if !eligible(cy as usize * width + cx as usize) {
            continue;
        }
        placed += 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
                    continue;
                }
                let i = y as usize * width + x as usize;
                if ((dx * dx + dy * dy) as f64) <= radius * radius && eligible(i) {
                    nucleus[i] = true;
                }
            }
        }
    }
}
