use std::path::Path;

use image::{ImageBuffer, LumaA, Rgb, RgbImage, Rgba, RgbaImage};

use super::predict::{SlidePrediction, CENTRAL, CENTRAL_LO, PATCH};
use crate::error::{invalid, Result};
use crate::patches::hsv_to_rgb;

pub const DEFAULT_THRESHOLD: f64 = 0.75;
/// Opacity of visible overlay pixels.
pub const OVERLAY_ALPHA: u8 = 160;

/// Dense slide-sized raster of central-region probabilities; pixels outside
/// any scored window are uncovered.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub width: usize,
    pub height: usize,
    pub probs: Vec<f32>,
    pub covered: Vec<bool>,
}

impl ProbabilityMap {
    pub fn empty(width: usize, height: usize) -> Self {
        ProbabilityMap {
            width,
            height,
            probs: vec![0.0; width * height],
            covered: vec![false; width * height],
        }
    }

    pub fn from_prediction(pred: &SlidePrediction, width: usize, height: usize) -> Result<Self> {
        let mut map = ProbabilityMap::empty(width, height);
        for tile in &pred.heatmap {
            let (ox, oy) = (tile.origin_px.0 as usize, tile.origin_px.1 as usize);
            if ox % PATCH != 0 || oy % PATCH != 0 || ox + PATCH > width || oy + PATCH > height {
                return invalid(format!(
                    "heatmap tile at ({ox}, {oy}) is not on the {PATCH}px grid of a {width}x{height} slide"
                ));
            }
            if tile.probs.len() != CENTRAL * CENTRAL {
                return invalid("heatmap tile is not 64x64");
            }
            for y in 0..CENTRAL {
                let row = (oy + CENTRAL_LO + y) * width + ox + CENTRAL_LO;
                map.probs[row..row + CENTRAL].copy_from_slice(&tile.probs[y * CENTRAL..(y + 1) * CENTRAL]);
                map.covered[row..row + CENTRAL].fill(true);
            }
        }
        Ok(map)
    }

    /// 16-bit gray+alpha PNG; alpha is zero where uncovered.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.probs.len() * 2);
        for (&p, &c) in self.probs.iter().zip(&self.covered) {
            buf.push((p.clamp(0.0, 1.0) * 65535.0).round() as u16);
            buf.push(if c { u16::MAX } else { 0 });
        }
        let img: ImageBuffer<LumaA<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, buf)
                .ok_or_else(|| crate::Error::Shape("probability raster".into()))?;
        img.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma_alpha16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut map = ProbabilityMap::empty(w, h);
        for (i, px) in img.pixels().enumerate() {
            map.probs[i] = px.0[0] as f32 / 65535.0;
            map.covered[i] = px.0[1] != 0;
        }
        Ok(map)
    }
}

/// Overlay color for a probability: none below the threshold, then a linear
/// hue ramp from green (at the threshold) to red (at 1).
pub fn heat_color(p: f32, threshold: f64) -> Option<[u8; 3]> {
    let t = threshold as f32;
    if p.is_nan() || p < t {
        return None;
    }
    let s = if t < 1.0 { ((p - t) / (1.0 - t)).clamp(0.0, 1.0) } else { 1.0 };
    let rgb = hsv_to_rgb([120.0 * (1.0 - s), 1.0, 1.0]);
    Some(rgb.map(|c| (c * 255.0).round() as u8))
}

/// Transparent-background overlay layer.
pub fn heatmap_layer(map: &ProbabilityMap, threshold: f64) -> RgbaImage {
    RgbaImage::from_fn(map.width as u32, map.height as u32, |x, y| {
        let i = y as usize * map.width + x as usize;
        match map.covered[i].then(|| heat_color(map.probs[i], threshold)).flatten() {
            Some([r, g, b]) => Rgba([r, g, b, OVERLAY_ALPHA]),
            None => Rgba([0, 0, 0, 0]),
        }
    })
}

/// Composites the overlay layer onto the slide raster.
pub fn render_heatmap(map: &ProbabilityMap, background: &RgbImage, threshold: f64) -> Result<RgbImage> {
    if (background.width() as usize, background.height() as usize) != (map.width, map.height) {
        return invalid(format!(
            "heatmap is {}x{} but the background is {}x{}",
            map.width,
            map.height,
            background.width(),
            background.height()
        ));
    }
    let layer = heatmap_layer(map, threshold);
    let mut out = background.clone();
    for (o, l) in out.pixels_mut().zip(layer.pixels()) {
        let a = l.0[3] as u32;
        if a == 0 {
            continue;
        }
        *o = Rgb(std::array::from_fn(|c| {
            ((l.0[c] as u32 * a + o.0[c] as u32 * (255 - a) + 127) / 255) as u8
        }));
    }
    Ok(out)
}
