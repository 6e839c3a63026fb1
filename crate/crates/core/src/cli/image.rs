//! Filter tiling and 8-bit grayscale image output (PNG or binary PGM).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Gray level of a tile whose values are all equal.
pub const FLAT_LEVEL: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Columns and rows of the tile grid: `ceil(sqrt(n))` columns and as many
/// rows as needed.
pub fn grid_shape(n_tiles: usize) -> (usize, usize) {
    if n_tiles == 0 {
        return (0, 0);
    }
    let mut cols = (n_tiles as f64).sqrt() as usize;
    while cols * cols < n_tiles {
        cols += 1;
    }
    (cols, n_tiles.div_ceil(cols))
}

/// Min-max scales one filter to `0..=255`.
pub fn scale_tile(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return vec![FLAT_LEVEL; values.len()];
    }
    values
        .iter()
        .map(|&v| (255.0 * (v - lo) / (hi - lo)).round() as u8)
        .collect()
}

/// Lays out square `side x side` tiles with 1 px black separators between them.
pub fn tile_filters(filters: &[Vec<f64>], side: usize) -> Result<GrayImage> {
    if filters.is_empty() {
        return Err(Error::arg("no filters to tile"));
    }
    if let Some(f) = filters.iter().find(|f| f.len() != side * side) {
        return Err(Error::arg(format!(
            "filter of {} values is not {side}x{side}",
            f.len()
        )));
    }
    let (cols, rows) = grid_shape(filters.len());
    let width = cols * side + cols - 1;
    let height = rows * side + rows - 1;
    let mut data = vec![0u8; width * height];
    for (i, f) in filters.iter().enumerate() {
        let (ty, tx) = (i / cols, i % cols);
        let (oy, ox) = (ty * (side + 1), tx * (side + 1));
        for (j, g) in scale_tile(f).into_iter().enumerate() {
            data[(oy + j / side) * width + ox + j % side] = g;
        }
    }
    Ok(GrayImage {
        width,
        height,
        data,
    })
}

/// Writes PNG or PGM depending on the file extension.
pub fn write_image(path: &Path, img: &GrayImage) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match ext.as_deref() {
        Some("pgm") => {
            write!(w, "P5\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
            w.write_all(&img.data).map_err(|e| Error::io(path, e))?;
        }
        Some("png") => {
            let mut enc = png::Encoder::new(&mut w, img.width as u32, img.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
            let mut writer = enc.write_header().map_err(io)?;
            writer.write_image_data(&img.data).map_err(io)?;
            writer.finish().map_err(io)?;
        }
        _ => {
            return Err(Error::arg(format!(
                "{}: image must end in .png or .pgm",
                path.display()
            )))
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
