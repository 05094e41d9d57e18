//! Any-resolution partitioning: choose a two-tile grid from the screen's
//! aspect ratio, resize the screen to fill it, and map boxes between the
//! original frame and each tile.

use image::imageops::{self, FilterType};
use image::RgbaImage;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, Rect};
use crate::scalar::FloatScalar;

pub const DEFAULT_BASE_RESOLUTION: u32 = 336;
/// Name recorded in sidecars for the resampling filter used by [`partition_image`].
pub const RESAMPLE_FILTER: &str = "bilinear";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows: u32,
    pub cols: u32,
}

impl GridConfig {
    /// Top and bottom tiles.
    pub const STACKED: GridConfig = GridConfig { rows: 2, cols: 1 };
    /// Left and right tiles.
    pub const SIDE_BY_SIDE: GridConfig = GridConfig { rows: 1, cols: 2 };

    pub fn tile_count(&self) -> u32 {
        self.rows * self.cols
    }

    pub fn is_supported(&self) -> bool {
        *self == Self::STACKED || *self == Self::SIDE_BY_SIDE
    }
}

/// Portrait (and square) screens are cut horizontally, landscape screens vertically.
pub fn select_grid(width: u32, height: u32) -> Result<GridConfig, GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::NonPositiveDimension {
            width: width as i64,
            height: height as i64,
        });
    }
    Ok(if width > height { GridConfig::SIDE_BY_SIDE } else { GridConfig::STACKED })
}

/// Placement of one tile inside the resized full image, plus the resize
/// factors from the original screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tile<T> {
    pub tile_index: u32,
    pub offset_x: u32,
    pub offset_y: u32,
    pub tile_w: u32,
    pub tile_h: u32,
    pub scale_x: T,
    pub scale_y: T,
}

impl<T: FloatScalar> Tile<T> {
    pub fn area(&self) -> u64 {
        self.tile_w as u64 * self.tile_h as u64
    }

    fn bounds(&self) -> (T, T, T, T) {
        let f = T::of_u32;
        (f(self.offset_x), f(self.offset_y), f(self.offset_x + self.tile_w), f(self.offset_y + self.tile_h))
    }
}

/// Tiles of `base_resolution` squares in row-major order.
pub fn plan_tiles<T: FloatScalar>(
    screen_w: u32,
    screen_h: u32,
    grid: GridConfig,
    base_resolution: u32,
) -> Result<Vec<Tile<T>>, GeometryError> {
    if screen_w == 0 || screen_h == 0 || base_resolution == 0 {
        return Err(GeometryError::NonPositiveDimension {
            width: screen_w as i64,
            height: screen_h as i64,
        });
    }
    if grid.rows == 0 || grid.cols == 0 {
        return Err(GeometryError::Malformed(format!("empty grid {grid:?}")));
    }
    let resized_w = base_resolution * grid.cols;
    let resized_h = base_resolution * grid.rows;
    let scale_x = T::of_u32(resized_w) / T::of_u32(screen_w);
    let scale_y = T::of_u32(resized_h) / T::of_u32(screen_h);
    let mut tiles = Vec::with_capacity(grid.tile_count() as usize);
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            tiles.push(Tile {
                tile_index: row * grid.cols + col,
                offset_x: col * base_resolution,
                offset_y: row * base_resolution,
                tile_w: base_resolution,
                tile_h: base_resolution,
                scale_x,
                scale_y,
            });
        }
    }
    Ok(tiles)
}

/// Maps an original-frame box into tile-local coordinates, clipped to the
/// tile. `None` when nothing with positive area remains.
pub fn project_bbox<T: FloatScalar>(b: &Rect<T>, t: &Tile<T>) -> Option<Rect<T>> {
    let (ox, oy, ex, ey) = t.bounds();
    let scaled = Rect { x1: b.x1 * t.scale_x, y1: b.y1 * t.scale_y, x2: b.x2 * t.scale_x, y2: b.y2 * t.scale_y };
    let clipped = scaled.intersection(&Rect { x1: ox, y1: oy, x2: ex, y2: ey })?;
    if clipped.area() <= T::zero() {
        return None;
    }
    Some(Rect { x1: clipped.x1 - ox, y1: clipped.y1 - oy, x2: clipped.x2 - ox, y2: clipped.y2 - oy })
}

/// Inverse of [`project_bbox`] for a tile-local box.
pub fn unproject_bbox<T: FloatScalar>(local: &Rect<T>, t: &Tile<T>) -> Rect<T> {
    let (ox, oy, _, _) = t.bounds();
    Rect {
        x1: (local.x1 + ox) / t.scale_x,
        y1: (local.y1 + oy) / t.scale_y,
        x2: (local.x2 + ox) / t.scale_x,
        y2: (local.y2 + oy) / t.scale_y,
    }
}

/// JSON written next to the tile images of one screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSidecar {
    pub screen_id: String,
    pub width: u32,
    pub height: u32,
    pub grid: GridConfig,
    pub base_resolution: u32,
    pub resample_filter: String,
    pub tiles: Vec<Tile<f64>>,
}

impl PartitionSidecar {
    pub fn plan(screen_id: &str, width: u32, height: u32, base_resolution: u32) -> Result<Self, GeometryError> {
        let grid = select_grid(width, height)?;
        Ok(PartitionSidecar {
            screen_id: screen_id.to_string(),
            width,
            height,
            grid,
            base_resolution,
            resample_filter: RESAMPLE_FILTER.to_string(),
            tiles: plan_tiles(width, height, grid, base_resolution)?,
        })
    }
}

/// Resizes the screen to the grid with bilinear filtering and cuts it into tiles.
pub fn partition_image(img: &RgbaImage, sidecar: &PartitionSidecar) -> Vec<RgbaImage> {
    let grid = sidecar.grid;
    let base = sidecar.base_resolution;
    let resized = imageops::resize(img, base * grid.cols, base * grid.rows, FilterType::Triangle);
    sidecar
        .tiles
        .iter()
        .map(|t| imageops::crop_imm(&resized, t.offset_x, t.offset_y, t.tile_w, t.tile_h).to_image())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_follows_orientation() {
        assert_eq!(select_grid(1792, 828).unwrap(), GridConfig::SIDE_BY_SIDE);
        assert_eq!(select_grid(828, 1792).unwrap(), GridConfig::STACKED);
        assert_eq!(select_grid(1000, 1000).unwrap(), GridConfig::STACKED);
        assert!(select_grid(0, 10).is_err());
    }

    #[test]
    fn stacked_plan() {
        let tiles = plan_tiles::<f64>(828, 1792, GridConfig::STACKED, 336).unwrap();
        assert_eq!(tiles.len(), 2);
        assert!(tiles.iter().all(|t| t.tile_w == 336 && t.tile_h == 336));
        assert_eq!((tiles[1].offset_x, tiles[1].offset_y), (0, 336));
        assert_relative_eq!(tiles[0].scale_x, 336.0 / 828.0);
        assert_relative_eq!(tiles[0].scale_y, 672.0 / 1792.0);
    }

    #[test]
    fn side_by_side_plan() {
        let tiles = plan_tiles::<f32>(1792, 828, GridConfig::SIDE_BY_SIDE, 336).unwrap();
        let offsets: Vec<_> = tiles.iter().map(|t| (t.offset_x, t.offset_y)).collect();
        assert_eq!(offsets, vec![(0, 0), (336, 0)]);
        let sq = plan_tiles::<f64>(999, 999, GridConfig::STACKED, 336).unwrap();
        assert_relative_eq!(sq[0].scale_x, 336.0 / 999.0);
        assert_relative_eq!(sq[0].scale_y, 672.0 / 999.0);
    }

    #[test]
    fn projection_examples() {
        let tiles = plan_tiles::<f64>(1000, 2000, GridConfig::STACKED, 500).unwrap();
        let full = Rect::new(0.0, 0.0, 1000.0, 2000.0).unwrap();
        assert_eq!(project_bbox(&full, &tiles[0]).unwrap(), Rect::new(0.0, 0.0, 500.0, 500.0).unwrap());
        assert_eq!(project_bbox(&full, &tiles[1]).unwrap(), Rect::new(0.0, 0.0, 500.0, 500.0).unwrap());

        let top_only = Rect::new(10.0, 10.0, 100.0, 100.0).unwrap();
        assert_eq!(project_bbox(&top_only, &tiles[1]), None);

        let b = Rect::new(100.0, 1100.0, 200.0, 1300.0).unwrap();
        assert_eq!(project_bbox(&b, &tiles[0]), None);
        assert_eq!(project_bbox(&b, &tiles[1]).unwrap(), Rect::new(50.0, 50.0, 100.0, 150.0).unwrap());
        assert_eq!(unproject_bbox(&Rect::new(50.0, 50.0, 100.0, 150.0).unwrap(), &tiles[1]), b);
    }

    #[test]
    fn partitions_pixels() {
        let mut img = RgbaImage::new(40, 80);
        for (_, y, p) in img.enumerate_pixels_mut() {
            *p = if y < 40 { image::Rgba([255, 0, 0, 255]) } else { image::Rgba([0, 0, 255, 255]) };
        }
        let sidecar = PartitionSidecar::plan("s", 40, 80, 16).unwrap();
        let tiles = partition_image(&img, &sidecar);
        assert_eq!(tiles.len(), 2);
        assert_eq!(tiles[0].dimensions(), (16, 16));
        assert_eq!(tiles[0].get_pixel(8, 4).0, [255, 0, 0, 255]);
        assert_eq!(tiles[1].get_pixel(8, 12).0, [0, 0, 255, 255]);
        assert_eq!(sidecar.resample_filter, "bilinear");
    }
}
