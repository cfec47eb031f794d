use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;

use super::balance::balance_manifest;
use super::grid::grid_patches;
use super::labeling::{label_patch, BinaryMask};
use super::tissue::{tissue_filter, RgbRaster};
use super::{LabelingRule, PatchLabel, PatchManifest, PatchRecord, SlideRef, PATCH_SIZE};
use crate::error::{Error, Result};

pub const SLIDE_INDEX: &str = "slides.jsonl";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractOptions {
    pub blur_sigma: f64,
    pub tissue_threshold: f64,
    pub rule: LabelingRule,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            blur_sigma: 2.0,
            tissue_threshold: 0.10,
            rule: LabelingRule::TrainMajority,
        }
    }
}

pub fn read_slide_index(dir: &Path) -> Result<Vec<SlideRef>> {
    let path = dir.join(SLIDE_INDEX);
    let file = File::open(&path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let mut slides = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SlideRef = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1)))?;
        s.validate()?;
        slides.push(s);
    }
    Ok(slides)
}

pub fn write_slide_index(dir: &Path, slides: &[SlideRef]) -> Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(SLIDE_INDEX))?);
    for s in slides {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn raster_from_image(image: &RgbImage, origin: (u32, u32), size: usize) -> Result<RgbRaster> {
    let (ox, oy) = origin;
    if ox as usize + size > image.width() as usize || oy as usize + size > image.height() as usize {
        return Err(Error::Shape(format!(
            "patch at {origin:?} exceeds {}x{} slide",
            image.width(),
            image.height()
        )));
    }
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let p = image.get_pixel(ox + x as u32, oy + y as u32).0;
            for c in 0..3 {
                data[c * plane + y * size + x] = p[c] as f32 / 255.0;
            }
        }
    }
    RgbRaster::new(size, size, data)
}

/// CHW `[0, 1]` pixels of the `size` square at `origin`.
pub fn image_patch(image: &RgbImage, origin: (u32, u32), size: usize) -> Result<Vec<f32>> {
    Ok(raster_from_image(image, origin, size)?.data)
}

/// Tiles one slide, discards background tiles, labels the rest. Records come
/// out ordered by `(grid_y, grid_x)`. Unannotated slides yield only
/// non-lesion records.
pub fn extract_slide_patches(
    slide: &SlideRef,
    image: &RgbImage,
    mask: Option<&BinaryMask>,
    opts: &ExtractOptions,
) -> Result<Vec<PatchRecord>> {
    if let Some(m) = mask {
        if (m.width, m.height) != (image.width() as usize, image.height() as usize) {
            return Err(Error::Shape(format!(
                "slide {}: mask {}x{} does not match image {}x{}",
                slide.slide_id,
                m.width,
                m.height,
                image.width(),
                image.height()
            )));
        }
    }
    let tiles = grid_patches((image.width() as usize, image.height() as usize), PATCH_SIZE)?;
    let mut records = Vec::new();
    for t in tiles {
        let raster = raster_from_image(image, t.origin_px, PATCH_SIZE)?;
        if !tissue_filter(&raster, opts.blur_sigma, opts.tissue_threshold)? {
            continue;
        }
        let (label, fraction) = match mask {
            Some(m) => {
                let crop = m.crop(
                    (t.origin_px.0 as usize, t.origin_px.1 as usize),
                    PATCH_SIZE,
                )?;
                label_patch(&crop, opts.rule)?
            }
            None => (PatchLabel::NonLesion, 0.0),
        };
        records.push(PatchRecord {
            slide_id: slide.slide_id.clone(),
            center_id: slide.center_id,
            set_role: slide.set_role,
            grid_x: t.grid_x,
            grid_y: t.grid_y,
            origin_px: t.origin_px,
            size_px: PATCH_SIZE as u32,
            label,
            central_lesion_fraction: fraction,
        });
    }
    Ok(records)
}

/// Lazily loads slide rasters and masks from a slide directory.
pub struct SlideStore {
    root: PathBuf,
    slides: HashMap<String, SlideRef>,
    images: HashMap<String, RgbImage>,
    masks: HashMap<String, Option<BinaryMask>>,
}

impl SlideStore {
    pub fn open(root: &Path) -> Result<Self> {
        let slides = read_slide_index(root)?;
        Ok(SlideStore::new(root, slides))
    }

    pub fn new(root: &Path, slides: Vec<SlideRef>) -> Self {
        SlideStore {
            root: root.to_path_buf(),
            slides: slides.into_iter().map(|s| (s.slide_id.clone(), s)).collect(),
            images: HashMap::new(),
            masks: HashMap::new(),
        }
    }

    pub fn slide(&self, slide_id: &str) -> Result<&SlideRef> {
        self.slides
            .get(slide_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown slide {slide_id}")))
    }

    pub fn image(&mut self, slide_id: &str) -> Result<&RgbImage> {
        if !self.images.contains_key(slide_id) {
            let path = self.root.join(&self.slide(slide_id)?.image_path);
            let img = image::open(&path)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
                .to_rgb8();
            self.images.insert(slide_id.to_string(), img);
        }
        Ok(&self.images[slide_id])
    }

    pub fn mask(&mut self, slide_id: &str) -> Result<Option<&BinaryMask>> {
        if !self.masks.contains_key(slide_id) {
            let mask = match &self.slide(slide_id)?.mask_path {
                None => None,
                Some(p) => {
                    let path = self.root.join(p);
                    let img = image::open(&path)
                        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
                        .to_luma8();
                    Some(BinaryMask {
                        width: img.width() as usize,
                        height: img.height() as usize,
                        data: img.as_raw().iter().map(|&v| (v != 0) as u8).collect(),
                    })
                }
            };
            self.masks.insert(slide_id.to_string(), mask);
        }
        Ok(self.masks[slide_id].as_ref())
    }

    /// CHW `[0, 1]` pixels of a patch.
    pub fn patch_pixels(&mut self, record: &PatchRecord) -> Result<Vec<f32>> {
        let size = record.size_px as usize;
        image_patch(self.image(&record.slide_id)?, record.origin_px, size)
    }

    /// Row-major 0/1 annotation of a patch (all zero for unannotated slides).
    pub fn patch_mask(&mut self, record: &PatchRecord) -> Result<Vec<f32>> {
        let size = record.size_px as usize;
        let origin = (record.origin_px.0 as usize, record.origin_px.1 as usize);
        Ok(match self.mask(&record.slide_id)? {
            Some(m) => m.crop(origin, size)?.data.iter().map(|&v| v as f32).collect(),
            None => vec![0.0; size * size],
        })
    }

    pub fn extract(&mut self, slide_id: &str, opts: &ExtractOptions) -> Result<Vec<PatchRecord>> {
        let slide = self.slide(slide_id)?.clone();
        self.image(slide_id)?;
        self.mask(slide_id)?;
        let image = &self.images[slide_id];
        let mask = self.masks[slide_id].as_ref();
        extract_slide_patches(&slide, image, mask, opts)
    }
}

/// Extracts every listed slide (in order) and balances the result.
pub fn prepare_manifest(
    store: &mut SlideStore,
    slide_ids: &[String],
    drop_fraction: f64,
    seed: u64,
    opts: &ExtractOptions,
) -> Result<PatchManifest> {
    let mut records = Vec::new();
    for id in slide_ids {
        records.extend(store.extract(id, opts)?);
    }
    let manifest = PatchManifest::new(records, opts.rule);
    balance_manifest(&manifest, drop_fraction, seed)
}
