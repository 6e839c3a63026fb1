//! The public archive layout: `patchesNNNN.bmp` grids of 16x16 patches,
//! `info.txt` with one 3D-point id per patch, and six-column match files.

use std::fs;
use std::path::{Path, PathBuf};

use super::bmp::{self, Gray8};
use super::{LabeledPair, Patch, PatchSet, Scene, PATCH_PIXELS, PATCH_SIDE};
use crate::error::{Error, Result};

pub const SHEET_SIDE: usize = 1024;
pub const GRID: usize = SHEET_SIDE / PATCH_SIDE;
pub const PATCHES_PER_SHEET: usize = GRID * GRID;

pub fn sheet_name(index: usize) -> String {
    format!("patches{index:04}.bmp")
}

fn sheet_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("patches")?.strip_suffix(".bmp")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parses `info.txt` content: the first integer on each non-blank line is the
/// 3D-point id of the corresponding patch.
pub fn parse_info(text: &str) -> std::result::Result<Vec<u64>, (usize, String)> {
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tok = line.split_whitespace().next().unwrap_or_default();
        let id = tok
            .parse::<u64>()
            .map_err(|e| (i + 1, format!("bad 3D point id {tok:?}: {e}")))?;
        ids.push(id);
    }
    Ok(ids)
}

/// One row of a match file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchLine {
    pub line: usize,
    pub patch_a: usize,
    pub point_a: u64,
    pub patch_b: usize,
    pub point_b: u64,
}

/// Parses match-file content: six whitespace-separated integers per line.
pub fn parse_match_lines(text: &str) -> std::result::Result<Vec<MatchLine>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err((lineno, format!("expected 6 fields, found {}", fields.len())));
        }
        let mut nums = [0u64; 6];
        for (n, f) in nums.iter_mut().zip(&fields) {
            *n = f
                .parse::<u64>()
                .map_err(|e| (lineno, format!("bad integer {f:?}: {e}")))?;
        }
        let to_idx =
            |v: u64| usize::try_from(v).map_err(|_| (lineno, format!("patch id {v} too large")));
        out.push(MatchLine {
            line: lineno,
            patch_a: to_idx(nums[0])?,
            point_a: nums[1],
            patch_b: to_idx(nums[3])?,
            point_b: nums[4],
        });
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a scene directory into a [`PatchSet`].
///
/// Bitmaps are read in numeric order and each is cut into its 16x16 grid in
/// row-major order. The info file decides how many patches exist; trailing
/// filler cells on the last sheet are dropped.
pub fn load_patch_archive(dir: &Path, scene: Scene) -> Result<PatchSet> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut max_index = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(idx) = entry.file_name().to_str().and_then(sheet_index) {
            max_index = Some(max_index.map_or(idx, |m: usize| m.max(idx)));
        }
    }
    let Some(max_index) = max_index else {
        return Err(Error::format(dir, None, "no patch bitmaps found"));
    };
    let n_sheets = max_index + 1;

    let info_path = dir.join("info.txt");
    let info_text = String::from_utf8(read_file(&info_path)?)
        .map_err(|_| Error::format(&info_path, None, "not valid UTF-8"))?;
    let point_ids =
        parse_info(&info_text).map_err(|(l, m)| Error::format(&info_path, Some(l), m))?;
    let capacity = n_sheets * PATCHES_PER_SHEET;
    if point_ids.len() > capacity {
        return Err(Error::format(
            &info_path,
            None,
            format!(
                "{} info lines but only {capacity} patch cells in {n_sheets} bitmaps",
                point_ids.len()
            ),
        ));
    }
    if point_ids.is_empty() {
        return Err(Error::format(
            &info_path,
            None,
            "info file lists no patches",
        ));
    }

    let sheets_needed = point_ids.len().div_ceil(PATCHES_PER_SHEET);
    let mut patches = Vec::with_capacity(point_ids.len());
    for sheet in 0..sheets_needed {
        let path = dir.join(sheet_name(sheet));
        let img = bmp::decode(&read_file(&path)?)
            .map_err(|e| Error::format(&path, None, e.to_string()))?;
        if img.width != SHEET_SIDE || img.height != SHEET_SIDE {
            return Err(Error::format(
                &path,
                None,
                format!(
                    "expected {SHEET_SIDE}x{SHEET_SIDE}, found {}x{}",
                    img.width, img.height
                ),
            ));
        }
        for cell in 0..PATCHES_PER_SHEET {
            let id = sheet * PATCHES_PER_SHEET + cell;
            if id >= point_ids.len() {
                break;
            }
            patches.push(Patch::from_gray8(id, point_ids[id], cut_cell(&img, cell))?);
        }
    }
    PatchSet::new(scene, patches)
}

fn cut_cell(img: &Gray8, cell: usize) -> Vec<u8> {
    let (gy, gx) = (cell / GRID, cell % GRID);
    let mut px = Vec::with_capacity(PATCH_PIXELS);
    for y in 0..PATCH_SIDE {
        let row = (gy * PATCH_SIDE + y) * img.width + gx * PATCH_SIDE;
        px.extend_from_slice(&img.data[row..row + PATCH_SIDE]);
    }
    px
}

/// Loads a match file without a patch set; labels come from the 3D point
/// columns alone.
pub fn read_match_pairs(path: &Path) -> Result<Vec<LabeledPair>> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::format(path, None, "not valid UTF-8"))?;
    let lines = parse_match_lines(&text).map_err(|(l, m)| Error::format(path, Some(l), m))?;
    Ok(lines
        .into_iter()
        .map(|m| LabeledPair {
            a: m.patch_a,
            b: m.patch_b,
            is_match: m.point_a == m.point_b,
        })
        .collect())
}

/// Loads a match file and checks each pair against `set`.
pub fn load_match_pairs(path: &Path, set: &PatchSet) -> Result<Vec<LabeledPair>> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::format(path, None, "not valid UTF-8"))?;
    let lines = parse_match_lines(&text).map_err(|(l, m)| Error::format(path, Some(l), m))?;
    lines
        .into_iter()
        .map(|m| {
            let (pa, pb) = match (set.get(m.patch_a), set.get(m.patch_b)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::format(
                        path,
                        Some(m.line),
                        format!(
                            "patch id out of range ({}, {}) for a set of {}",
                            m.patch_a,
                            m.patch_b,
                            set.len()
                        ),
                    ))
                }
            };
            let is_match = m.point_a == m.point_b;
            if (pa.point3d_id == pb.point3d_id) != is_match {
                return Err(Error::format(
                    path,
                    Some(m.line),
                    "match label disagrees with the patch set's 3D point ids",
                ));
            }
            Ok(LabeledPair {
                a: m.patch_a,
                b: m.patch_b,
                is_match,
            })
        })
        .collect()
}

/// Name of the match file written for `n_pairs` pairs.
pub fn match_file_name(n_pairs: usize) -> String {
    format!("m50_{n_pairs}_{n_pairs}_0.txt")
}

/// Writes `set` (and optionally `pairs`) in the archive layout. Returns the
/// match file path when pairs were written.
pub fn write_patch_archive(
    dir: &Path,
    set: &PatchSet,
    pairs: Option<&[LabeledPair]>,
) -> Result<Option<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_sheets = set.len().div_ceil(PATCHES_PER_SHEET);
    for sheet in 0..n_sheets {
        let mut img = Gray8 {
            width: SHEET_SIDE,
            height: SHEET_SIDE,
            data: vec![0; SHEET_SIDE * SHEET_SIDE],
        };
        for cell in 0..PATCHES_PER_SHEET {
            let Some(p) = set.get(sheet * PATCHES_PER_SHEET + cell) else {
                break;
            };
            let (gy, gx) = (cell / GRID, cell % GRID);
            for y in 0..PATCH_SIDE {
                let row = (gy * PATCH_SIDE + y) * SHEET_SIDE + gx * PATCH_SIDE;
                img.data[row..row + PATCH_SIDE]
                    .copy_from_slice(&p.gray8()[y * PATCH_SIDE..(y + 1) * PATCH_SIDE]);
            }
        }
        let path = dir.join(sheet_name(sheet));
        fs::write(&path, bmp::encode(&img)).map_err(|e| Error::io(&path, e))?;
    }

    let info: String = set
        .patches()
        .iter()
        .map(|p| format!("{} 0\n", p.point3d_id))
        .collect();
    let info_path = dir.join("info.txt");
    fs::write(&info_path, info).map_err(|e| Error::io(&info_path, e))?;

    let Some(pairs) = pairs else {
        return Ok(None);
    };
    let mut text = String::new();
    for pr in pairs {
        let pa = set
            .get(pr.a)
            .ok_or_else(|| Error::arg(format!("pair id {} out of range", pr.a)))?;
        let pb = set
            .get(pr.b)
            .ok_or_else(|| Error::arg(format!("pair id {} out of range", pr.b)))?;
        text.push_str(&format!(
            "{} {} 0 {} {} 0\n",
            pr.a, pa.point3d_id, pr.b, pb.point3d_id
        ));
    }
    let path = dir.join(match_file_name(pairs.len()));
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(Some(path))
}

/// Finds the first `m50_*.txt` match file in a scene directory.
pub fn find_match_file(dir: &Path) -> Result<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("m50_") && n.ends_with(".txt"))
        })
        .collect();
    found.sort();
    found
        .into_iter()
        .next()
        .ok_or_else(|| Error::format(dir, None, "no m50_*.txt match file found"))
}
