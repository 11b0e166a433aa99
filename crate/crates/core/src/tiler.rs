//! Overlapping tile grids with a saturation-based background filter.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_OVERLAP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub overlap: f64,
    pub stride: usize,
    pub width: usize,
    pub height: usize,
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
}

impl TileGrid {
    /// Top-left corners, row by row.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        self.ys
            .iter()
            .flat_map(|&y| self.xs.iter().map(move |&x| (x, y)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Origins `0, s, 2s, …` that fit, plus `dim − tile` if the last one stops
/// short of the edge.
fn axis_origins(dim: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&p| p + tile <= dim).collect();
    if let Some(&last) = out.last() {
        if last + tile < dim {
            out.push(dim - tile);
        }
    }
    out
}

/// Number of tiles along an axis for the stride/snap rule.
pub fn expected_count(dim: usize, tile: usize, stride: usize) -> usize {
    (dim - tile).div_ceil(stride) + 1
}

pub fn plan_grid(width: usize, height: usize, tile_size: usize, overlap: f64) -> Result<TileGrid> {
    if tile_size == 0 {
        return Err(Error::Config("tile size must be positive".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap must be in [0, 1), got {overlap}")));
    }
    if width < tile_size || height < tile_size {
        return Err(Error::Shape(format!(
            "image {width}x{height} is smaller than tile {tile_size}"
        )));
    }
    let stride = (tile_size as f64 * (1.0 - overlap)).round() as usize;
    if stride == 0 {
        return Err(Error::Config("overlap leaves a zero stride".into()));
    }
    Ok(TileGrid {
        tile_size,
        overlap,
        stride,
        width,
        height,
        xs: axis_origins(width, tile_size, stride),
        ys: axis_origins(height, tile_size, stride),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundFilter {
    /// A pixel is tissue when its HSV saturation exceeds this.
    pub saturation_threshold: f64,
    /// A tile is kept when its tissue fraction is at least this.
    pub min_tissue: f64,
}

impl Default for BackgroundFilter {
    fn default() -> Self {
        Self {
            saturation_threshold: 0.05,
            min_tissue: 0.1,
        }
    }
}

/// HSV saturation `(max − min) / max`; 0 for black.
pub fn saturation(pixel: &[f64]) -> f64 {
    if pixel.len() < 3 {
        return 0.0;
    }
    let max = pixel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = pixel.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

impl BackgroundFilter {
    pub fn tissue_fraction(&self, tile: &Image) -> f64 {
        let c = tile.channels();
        let tissue = tile
            .data()
            .chunks_exact(c)
            .filter(|p| saturation(p) > self.saturation_threshold)
            .count();
        tissue as f64 / tile.pixel_count() as f64
    }

    pub fn keeps(&self, tissue_fraction: f64) -> bool {
        tissue_fraction >= self.min_tissue
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileRecord {
    pub x: usize,
    pub y: usize,
    pub tissue_fraction: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub image: Image,
    pub x: usize,
    pub y: usize,
    pub tissue_fraction: f64,
}

fn check_grid(image: &Image, grid: &TileGrid) -> Result<()> {
    if image.width() != grid.width || image.height() != grid.height {
        return Err(Error::Shape(format!(
            "grid planned for {}x{} but image is {}x{}",
            grid.width,
            grid.height,
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Tissue fraction and keep decision for every grid position.
pub fn scan(image: &Image, grid: &TileGrid, filter: &BackgroundFilter) -> Result<Vec<TileRecord>> {
    check_grid(image, grid)?;
    grid.origins()
        .into_par_iter()
        .map(|(x, y)| {
            let tile = image.crop(x, y, grid.tile_size, grid.tile_size)?;
            let tissue_fraction = filter.tissue_fraction(&tile);
            Ok(TileRecord {
                x,
                y,
                tissue_fraction,
                kept: filter.keeps(tissue_fraction),
            })
        })
        .collect()
}

/// The kept tiles, in grid order.
pub fn extract(image: &Image, grid: &TileGrid, filter: &BackgroundFilter) -> Result<Vec<Tile>> {
    check_grid(image, grid)?;
    let tiles: Vec<Option<Tile>> = grid
        .origins()
        .into_par_iter()
        .map(|(x, y)| {
            let tile = image.crop(x, y, grid.tile_size, grid.tile_size)?;
            let tissue_fraction = filter.tissue_fraction(&tile);
            Ok(filter.keeps(tissue_fraction).then_some(Tile {
                image: tile,
                x,
                y,
                tissue_fraction,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(tiles.into_iter().flatten().collect())
}

pub fn tile_file_name(x: usize, y: usize) -> String {
    format!("x{x}_y{y}.png")
}

/// CSV with columns `x,y,tissue_fraction,kept,path` (path empty for
/// dropped tiles).
pub fn write_manifest<W: Write>(records: &[TileRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "tissue_fraction", "kept", "path"])?;
    for r in records {
        w.write_record([
            r.x.to_string(),
            r.y.to_string(),
            r.tissue_fraction.to_string(),
            r.kept.to_string(),
            if r.kept { tile_file_name(r.x, r.y) } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes kept tiles as PNGs plus `manifest.csv` into `dir`.
pub fn save_tiles(image: &Image, grid: &TileGrid, filter: &BackgroundFilter, dir: impl AsRef<Path>) -> Result<Vec<TileRecord>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let records = scan(image, grid, filter)?;
    for r in records.iter().filter(|r| r.kept) {
        image
            .crop(r.x, r.y, grid.tile_size, grid.tile_size)?
            .save_png(dir.join(tile_file_name(r.x, r.y)))?;
    }
    write_manifest(&records, std::fs::File::create(dir.join("manifest.csv"))?)?;
    Ok(records)
}
