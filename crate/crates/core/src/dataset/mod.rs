//! Patch-correspondence corpora: the on-disk archive layout, match/non-match
//! pair files, and a synthetic substitute for offline work.

pub mod archive;
pub mod bmp;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use archive::{
    find_match_file, load_match_pairs, load_patch_archive, parse_info, parse_match_lines,
    read_match_pairs, write_patch_archive, MatchLine,
};
pub use synth::synthesize_corpus;

/// Side length of a stored patch in pixels.
pub const PATCH_SIDE: usize = 64;
/// Pixels per stored patch.
pub const PATCH_PIXELS: usize = PATCH_SIDE * PATCH_SIDE;

/// The scene a patch set was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scene {
    Liberty,
    NotreDame,
    HalfDome,
    Synth,
}

impl Scene {
    pub fn code(self) -> &'static str {
        match self {
            Scene::Liberty => "LY",
            Scene::NotreDame => "ND",
            Scene::HalfDome => "HD",
            Scene::Synth => "SYNTH",
        }
    }

    /// Directory names under which the public distribution ships this scene.
    pub fn dir_aliases(self) -> &'static [&'static str] {
        match self {
            Scene::Liberty => &["LY", "liberty"],
            Scene::NotreDame => &["ND", "notredame"],
            Scene::HalfDome => &["HD", "yosemite", "halfdome"],
            Scene::Synth => &["SYNTH", "synth"],
        }
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Scene {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ly" | "liberty" => Ok(Scene::Liberty),
            "nd" | "notredame" => Ok(Scene::NotreDame),
            "hd" | "yosemite" | "halfdome" | "ym" => Ok(Scene::HalfDome),
            s if s.starts_with("synth") => Ok(Scene::Synth),
            _ => Err(Error::arg(format!(
                "unknown scene {s:?} (expected LY, ND, HD or SYNTH*)"
            ))),
        }
    }
}

/// A single 64x64 grayscale patch with its 3D-point label.
///
/// Pixels are stored as 8-bit levels, exactly as in the archive bitmaps; the
/// accessors expose them as intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub patch_id: usize,
    pub point3d_id: u64,
    pixels: Box<[u8]>,
}

impl Patch {
    pub fn from_gray8(patch_id: usize, point3d_id: u64, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != PATCH_PIXELS {
            return Err(Error::arg(format!(
                "patch needs {PATCH_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Patch {
            patch_id,
            point3d_id,
            pixels: pixels.into_boxed_slice(),
        })
    }

    /// Builds a patch from unit-range intensities, quantizing to 8 bits.
    pub fn from_unit(patch_id: usize, point3d_id: u64, values: &[f64]) -> Result<Self> {
        if let Some(bad) = values
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::arg(format!("intensity {bad} outside [0,1]")));
        }
        let px = values.iter().map(|v| (v * 255.0).round() as u8).collect();
        Self::from_gray8(patch_id, point3d_id, px)
    }

    pub fn gray8(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn intensity(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * PATCH_SIDE + x] as f64 / 255.0
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// An ordered, non-empty collection of patches from one scene (or a union).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub scene: Scene,
    patches: Vec<Patch>,
}

impl PatchSet {
    /// Renumbers `patch_id` to match position, so ids are always unique.
    pub fn new(scene: Scene, mut patches: Vec<Patch>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::arg("patch set must not be empty"));
        }
        for (i, p) in patches.iter_mut().enumerate() {
            p.patch_id = i;
        }
        Ok(PatchSet { scene, patches })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Patch> {
        self.patches.get(id)
    }

    /// Concatenates several sets (joint training on multiple scenes).
    pub fn union(sets: Vec<PatchSet>) -> Result<PatchSet> {
        let scene = sets
            .first()
            .map(|s| s.scene)
            .ok_or_else(|| Error::arg("union of zero patch sets"))?;
        let patches = sets.into_iter().flat_map(|s| s.patches).collect();
        PatchSet::new(scene, patches)
    }
}

/// A labeled pair of patch ids from a match file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPair {
    pub a: usize,
    pub b: usize,
    pub is_match: bool,
}

/// Bilinear resampling of a patch to `side x side`, pixel centers aligned.
///
/// Output is row-major. `side == 64` is an exact copy.
pub fn resample_patch(p: &Patch, side: usize) -> Result<Vec<f64>> {
    if side == 0 || side > PATCH_SIDE {
        return Err(Error::arg(format!(
            "resample side must be in 1..=64, got {side}"
        )));
    }
    let scale = PATCH_SIDE as f64 / side as f64;
    let taps: Vec<(usize, usize, f64)> = (0..side)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (PATCH_SIDE - 1) as f64);
            let i0 = (s.floor() as usize).min(PATCH_SIDE - 2);
            (i0, i0 + 1, s - i0 as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(side * side);
    for &(y0, y1, fy) in &taps {
        for &(x0, x1, fx) in &taps {
            let top = p.intensity(x0, y0) * (1.0 - fx) + p.intensity(x1, y0) * fx;
            let bot = p.intensity(x0, y1) * (1.0 - fx) + p.intensity(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Ok(out)
}
