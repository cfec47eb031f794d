use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridTile {
    pub grid_x: u32,
    pub grid_y: u32,
    pub origin_px: (u32, u32),
}

/// Non-overlapping square tiles covering the image; partial edge tiles are
/// dropped. Tiles are ordered row-major, by `(grid_y, grid_x)`.
pub fn grid_patches(dims: (usize, usize), patch_size: usize) -> Result<Vec<GridTile>> {
    let (width, height) = dims;
    if patch_size == 0 || width < patch_size || height < patch_size {
        return Err(Error::EmptyGrid {
            width,
            height,
            patch: patch_size,
        });
    }
    let (cols, rows) = (width / patch_size, height / patch_size);
    let mut tiles = Vec::with_capacity(cols * rows);
    for gy in 0..rows {
        for gx in 0..cols {
            tiles.push(GridTile {
                grid_x: gx as u32,
                grid_y: gy as u32,
                origin_px: ((gx * patch_size) as u32, (gy * patch_size) as u32),
            });
        }
    }
    Ok(tiles)
}
