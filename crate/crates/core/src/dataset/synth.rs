//! Synthetic patch-correspondence corpus.
//!
//! Each 3D point owns a smooth random texture (low-pass filtered white
//! noise). Its views are that texture seen through a small random affine
//! warp, with brightness/contrast jitter and additive sensor noise, then
//! quantized to 8 bits like the archive bitmaps.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LabeledPair, Patch, PatchSet, Scene, PATCH_PIXELS, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::rng;

const TEX_SIDE: usize = 96;
const TEXTURE_TAG: u64 = 0x5445_5854;
const VIEW_TAG: u64 = 0x5649_4557;
const PAIR_TAG: u64 = 0x5041_4952;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable blur with wrap-around borders.
fn blur(field: &[f64], side: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let n = side as isize;
    let mut tmp = vec![0.0; field.len()];
    for y in 0..side {
        for x in 0..side {
            tmp[y * side + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    w * field[y * side + (x as isize + i as isize - r).rem_euclid(n) as usize]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; field.len()];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    w * tmp[(y as isize + i as isize - r).rem_euclid(n) as usize * side + x]
                })
                .sum();
        }
    }
    out
}

fn texture(seed: u64, point: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[TEXTURE_TAG, point as u64]);
    let noise: Vec<f64> = (0..TEX_SIDE * TEX_SIDE)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    // two octaves: coarse shape plus finer detail
    let coarse = blur(&noise, TEX_SIDE, rng.random_range(3.0..5.0));
    let fine = blur(&noise, TEX_SIDE, rng.random_range(1.2..2.0));
    let mix: f64 = rng.random_range(0.3..0.7);
    let mut t: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| c + mix * f).collect();
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let sd = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
    let base: f64 = rng.random_range(0.35..0.65);
    t.iter_mut()
        .for_each(|v| *v = base + 0.15 * (*v - mean) / sd);
    t
}

fn sample_bilinear(t: &[f64], x: f64, y: f64) -> f64 {
    let max = (TEX_SIDE - 1) as f64;
    let (x, y) = (x.clamp(0.0, max), y.clamp(0.0, max));
    let (x0, y0) = (
        (x.floor() as usize).min(TEX_SIDE - 2),
        (y.floor() as usize).min(TEX_SIDE - 2),
    );
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize| t[yy * TEX_SIDE + xx];
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

fn render_view(tex: &[f64], seed: u64, point: usize, view: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[VIEW_TAG, point as u64, view as u64]);
    let angle: f64 = rng.random_range(-0.25..0.25);
    let scale: f64 = rng.random_range(0.88..1.12);
    let shear: f64 = rng.random_range(-0.08..0.08);
    let (tx, ty): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let contrast: f64 = rng.random_range(0.75..1.25);
    let brightness: f64 = rng.random_range(-0.1..0.1);
    let (c, s) = (angle.cos() * scale, angle.sin() * scale);

    let out_c = (PATCH_SIDE as f64 - 1.0) / 2.0;
    let tex_c = (TEX_SIDE as f64 - 1.0) / 2.0;
    let mut px = Vec::with_capacity(PATCH_PIXELS);
    for y in 0..PATCH_SIDE {
        for x in 0..PATCH_SIDE {
            let (dx, dy) = (x as f64 - out_c, y as f64 - out_c);
            let dx = dx + shear * dy;
            let sx = c * dx - s * dy + tex_c + tx;
            let sy = s * dx + c * dy + tex_c + ty;
            let v = sample_bilinear(tex, sx, sy);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let v = (v - 0.5) * contrast + 0.5 + brightness + 0.02 * noise;
            px.push(v.clamp(0.0, 1.0));
        }
    }
    px
}

/// Generates `n_points * views_per_point` patches and a balanced pair list.
///
/// Matching pairs link consecutive views of the same point; an equal number
/// of non-matching pairs link random views of distinct points. The pair list
/// is shuffled. Output is a pure function of the arguments.
pub fn synthesize_corpus(
    seed: u64,
    n_points: usize,
    views_per_point: usize,
) -> Result<(PatchSet, Vec<LabeledPair>)> {
    if n_points < 2 || views_per_point < 2 {
        return Err(Error::arg(format!(
            "need at least 2 points and 2 views per point, got {n_points} x {views_per_point}"
        )));
    }
    use rayon::prelude::*;
    let patches: Vec<Patch> = (0..n_points)
        .into_par_iter()
        .flat_map_iter(|point| {
            let tex = texture(seed, point);
            (0..views_per_point)
                .map(|view| {
                    let px = render_view(&tex, seed, point, view);
                    Patch::from_unit(point * views_per_point + view, point as u64, &px)
                        .expect("rendered intensities are clamped")
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let set = PatchSet::new(Scene::Synth, patches)?;

    let mut rng = rng::stream(seed, &[PAIR_TAG]);
    let mut pairs = Vec::new();
    for point in 0..n_points {
        for v in 0..views_per_point - 1 {
            let a = point * views_per_point + v;
            pairs.push(LabeledPair {
                a,
                b: a + 1,
                is_match: true,
            });
        }
    }
    let n_match = pairs.len();
    for _ in 0..n_match {
        let pa = rng.random_range(0..n_points);
        let pb = (pa + rng.random_range(1..n_points)) % n_points;
        let a = pa * views_per_point + rng.random_range(0..views_per_point);
        let b = pb * views_per_point + rng.random_range(0..views_per_point);
        pairs.push(LabeledPair {
            a,
            b,
            is_match: false,
        });
    }
    pairs.shuffle(&mut rng);
    Ok((set, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_balance() {
        let (set, pairs) = synthesize_corpus(1, 10, 2).unwrap();
        assert_eq!(set.len(), 20);
        let m = pairs.iter().filter(|p| p.is_match).count();
        assert_eq!(m, pairs.len() - m);
        for p in &pairs {
            let same = set.get(p.a).unwrap().point3d_id == set.get(p.b).unwrap().point3d_id;
            assert_eq!(same, p.is_match);
        }
    }

    #[test]
    fn deterministic() {
        let a = synthesize_corpus(3, 4, 3).unwrap();
        let b = synthesize_corpus(3, 4, 3).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = synthesize_corpus(4, 4, 3).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn preconditions() {
        assert!(synthesize_corpus(1, 1, 2).is_err());
        assert!(synthesize_corpus(1, 2, 1).is_err());
    }
}
