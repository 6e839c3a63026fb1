//! Minimal codec for uncompressed 8-bit palettized BMP files.
//!
//! Only the subset used by the patch archives is supported: BITMAPINFOHEADER
//! (or a larger V4/V5 header), 8 bits per pixel, no compression, bottom-up or
//! top-down row order. Palette entries are mapped to luminance on decode.

use std::fmt;

/// Largest width/height accepted by the decoder.
pub const MAX_SIDE: usize = 16_384;

/// An 8-bit grayscale raster, row-major, top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BmpError(pub String);

impl fmt::Display for BmpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BmpError {}

fn err<T>(msg: impl Into<String>) -> Result<T, BmpError> {
    Err(BmpError(msg.into()))
}

fn u16_at(b: &[u8], off: usize) -> Result<u16, BmpError> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| BmpError(format!("truncated header at byte {off}")))
}

fn u32_at(b: &[u8], off: usize) -> Result<u32, BmpError> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| BmpError(format!("truncated header at byte {off}")))
}

fn i32_at(b: &[u8], off: usize) -> Result<i32, BmpError> {
    u32_at(b, off).map(|v| v as i32)
}

/// Decodes an 8-bit BMP into grayscale.
pub fn decode(bytes: &[u8]) -> Result<Gray8, BmpError> {
    if bytes.len() < 2 || &bytes[..2] != b"BM" {
        return err("missing BM signature");
    }
    let data_offset = u32_at(bytes, 10)? as usize;
    let dib_size = u32_at(bytes, 14)? as usize;
    if dib_size < 40 {
        return err(format!("unsupported DIB header size {dib_size}"));
    }
    let width = i32_at(bytes, 18)?;
    let height = i32_at(bytes, 22)?;
    let bpp = u16_at(bytes, 28)?;
    let compression = u32_at(bytes, 30)?;
    let colors_used = u32_at(bytes, 46)? as usize;

    if bpp != 8 {
        return err(format!("expected 8 bits per pixel, found {bpp}"));
    }
    if compression != 0 {
        return err(format!(
            "compressed bitmaps are not supported (method {compression})"
        ));
    }
    if width <= 0 || height == 0 || height == i32::MIN {
        return err(format!("invalid dimensions {width}x{height}"));
    }
    let top_down = height < 0;
    let (w, h) = (width as usize, height.unsigned_abs() as usize);
    if w > MAX_SIDE || h > MAX_SIDE {
        return err(format!("dimensions {w}x{h} exceed {MAX_SIDE}"));
    }

    let n_colors = if colors_used == 0 {
        256
    } else {
        colors_used.min(256)
    };
    let palette_start = 14 + dib_size;
    let palette_bytes = bytes
        .get(palette_start..palette_start + 4 * n_colors)
        .ok_or_else(|| BmpError("truncated palette".into()))?;
    let mut lut = [0u8; 256];
    for (i, entry) in palette_bytes.chunks_exact(4).enumerate() {
        let (b, g, r) = (entry[0] as u32, entry[1] as u32, entry[2] as u32);
        lut[i] = if r == g && g == b {
            r as u8
        } else {
            ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
        };
    }

    let stride = (w + 3) & !3;
    let needed = stride
        .checked_mul(h)
        .and_then(|n| n.checked_add(data_offset))
        .ok_or_else(|| BmpError("size overflow".into()))?;
    if bytes.len() < needed {
        return err(format!(
            "truncated pixel data: need {needed} bytes, have {}",
            bytes.len()
        ));
    }

    let mut data = vec![0u8; w * h];
    for row in 0..h {
        let src_row = if top_down { row } else { h - 1 - row };
        let src = &bytes[data_offset + src_row * stride..][..w];
        for (dst, &idx) in data[row * w..(row + 1) * w].iter_mut().zip(src) {
            if idx as usize >= n_colors {
                return err(format!("palette index {idx} out of range"));
            }
            *dst = lut[idx as usize];
        }
    }
    Ok(Gray8 {
        width: w,
        height: h,
        data,
    })
}

/// Encodes a grayscale raster as a bottom-up 8-bit BMP with an identity gray palette.
pub fn encode(img: &Gray8) -> Vec<u8> {
    let stride = (img.width + 3) & !3;
    let data_offset = 14 + 40 + 256 * 4;
    let file_size = data_offset + stride * img.height;
    let mut out = Vec::with_capacity(file_size);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&(file_size as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&(data_offset as u32).to_le_bytes());
    out.extend_from_slice(&40u32.to_le_bytes());
    out.extend_from_slice(&(img.width as i32).to_le_bytes());
    out.extend_from_slice(&(img.height as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&8u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&((stride * img.height) as u32).to_le_bytes());
    out.extend_from_slice(&2835u32.to_le_bytes());
    out.extend_from_slice(&2835u32.to_le_bytes());
    out.extend_from_slice(&256u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for i in 0..=255u8 {
        out.extend_from_slice(&[i, i, i, 0]);
    }
    let pad = stride - img.width;
    for row in (0..img.height).rev() {
        out.extend_from_slice(&img.data[row * img.width..(row + 1) * img.width]);
        out.extend(std::iter::repeat_n(0u8, pad));
    }
    out
}
