//! Patch descriptors from trained models: real activations, normalized
//! variants and thresholded bitsets.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{resample_patch, Patch};
use crate::error::{Error, Result};
use crate::grbm::GrbmParams;
use crate::mcrbm::McrbmParams;
use crate::preprocess::{normalize_patch, Whitener};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Normalization {
    None,
    L1,
    L2,
}

impl Normalization {
    pub fn code(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::L1 => "l1",
            Normalization::L2 => "l2",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Normalization::None),
            "l1" => Ok(Normalization::L1),
            "l2" => Ok(Normalization::L2),
            _ => Err(Error::arg(format!(
                "unknown normalization {s:?} (none, l1, l2)"
            ))),
        }
    }
}

/// Where a descriptor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Grbm,
    SpGrbm,
    McrbmCov,
    /// Resampled, normalized pixels.
    Raw,
    /// Imported from another tool.
    External,
}

impl Source {
    pub fn code(self) -> &'static str {
        match self {
            Source::Grbm => "grbm",
            Source::SpGrbm => "spgrbm",
            Source::McrbmCov => "mcrbm-cov",
            Source::Raw => "raw",
            Source::External => "external",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grbm" => Ok(Source::Grbm),
            "spgrbm" => Ok(Source::SpGrbm),
            "mcrbm-cov" => Ok(Source::McrbmCov),
            "raw" => Ok(Source::Raw),
            "external" => Ok(Source::External),
            _ => Err(Error::arg(format!("unknown descriptor source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
    pub source: Source,
    pub normalization: Normalization,
    /// Set when normalization was requested on an all-zero vector.
    pub degenerate: bool,
}

impl Descriptor {
    pub fn new(values: Vec<f64>, source: Source) -> Self {
        Descriptor {
            values,
            source,
            normalization: Normalization::None,
            degenerate: false,
        }
    }
}

/// A fixed-width bitset, bit `j` set iff activation `j` exceeded the threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryDescriptor {
    width: usize,
    words: Vec<u64>,
}

impl BinaryDescriptor {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (j, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            words[j / 64] |= 1 << (j % 64);
        }
        BinaryDescriptor {
            width: bits.len(),
            words,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, j: usize) -> bool {
        j < self.width && self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Storage size in bytes.
    pub fn byte_len(&self) -> usize {
        self.width.div_ceil(8)
    }

    /// Hex string, two digits per byte, byte `k` holding bits `8k..8k+8`
    /// (least significant bit first).
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = (0..self.byte_len())
            .map(|k| (self.words[k / 8] >> (8 * (k % 8))) as u8)
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(hex: &str, width: usize) -> Result<Self> {
        let n_bytes = width.div_ceil(8);
        if hex.len() != 2 * n_bytes {
            return Err(Error::arg(format!(
                "bitset of width {width} needs {} hex digits, got {:?}",
                2 * n_bytes,
                hex
            )));
        }
        let bytes = hex::decode(hex).map_err(|e| Error::arg(format!("bad hex in {hex:?}: {e}")))?;
        let mut words = vec![0u64; width.div_ceil(64)];
        for (k, &byte) in bytes.iter().enumerate() {
            words[k / 8] |= (byte as u64) << (8 * (k % 8));
        }
        if width % 64 != 0 {
            let last = words.len() - 1;
            if words[last] >> (width % 64) != 0 {
                return Err(Error::arg(format!("bits set beyond width {width}")));
            }
        }
        Ok(BinaryDescriptor { width, words })
    }
}

/// Resampled and brightness/contrast-normalized pixels, the input of the GRBMs.
pub fn grbm_input(patch: &Patch, side: usize) -> Result<Vec<f64>> {
    Ok(normalize_patch(&resample_patch(patch, side)?))
}

/// Hidden-unit activations `sigmoid((v .* sqrt(lambda))' W + b)` of a preprocessed patch.
pub fn grbm_descriptor(
    patch: &Patch,
    p: &GrbmParams,
    side: usize,
    source: Source,
) -> Result<Descriptor> {
    let v = Array1::from(grbm_input(patch, side)?);
    Ok(Descriptor::new(
        p.hidden_given_visible(v.view())?.to_vec(),
        source,
    ))
}

/// Raw-pixel baseline descriptor.
pub fn raw_descriptor(patch: &Patch, side: usize) -> Result<Descriptor> {
    Ok(Descriptor::new(grbm_input(patch, side)?, Source::Raw))
}

/// Covariance-unit activations of a resampled, whitened patch. Mean units
/// are left out.
pub fn mcrbm_descriptor(
    patch: &Patch,
    p: &McrbmParams,
    w: &Whitener,
    side: usize,
) -> Result<Descriptor> {
    let raw = Array1::from(resample_patch(patch, side)?);
    let white = w.apply(raw.view())?;
    if white.len() != p.n_visible() {
        return Err(Error::arg(format!(
            "whitener yields {} dims but the model expects {}",
            white.len(),
            p.n_visible()
        )));
    }
    Ok(Descriptor::new(
        p.cov_hidden_given_visible(white.view())?.to_vec(),
        Source::McrbmCov,
    ))
}

/// Batched [`mcrbm_descriptor`] over rows of resampled pixels.
pub fn mcrbm_activations(
    raw_rows: ArrayView2<f64>,
    p: &McrbmParams,
    w: &Whitener,
) -> Result<Array2<f64>> {
    let white = w.apply_rows(raw_rows)?;
    if white.ncols() != p.n_visible() {
        return Err(Error::arg(format!(
            "whitener yields {} dims but the model expects {}",
            white.ncols(),
            p.n_visible()
        )));
    }
    p.cov_hidden_given_visible_rows(white.view())
}

/// Exact median of all values; the midpoint of the two central order
/// statistics for an even count.
pub fn fit_binarization_threshold<I: IntoIterator<Item = f64>>(activations: I) -> Result<f64> {
    let mut v: Vec<f64> = activations.into_iter().collect();
    if v.is_empty() {
        return Err(Error::arg("cannot fit a threshold on zero activations"));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::arg("activations contain NaN"));
    }
    let n = v.len();
    let mid = n / 2;
    let (lower, &mut upper_mid, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        Ok(upper_mid)
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (below + upper_mid))
    }
}

/// Bit `j` is set iff `values[j] > threshold`.
pub fn binarize(d: &Descriptor, threshold: f64) -> BinaryDescriptor {
    let bits: Vec<bool> = d.values.iter().map(|&x| x > threshold).collect();
    BinaryDescriptor::from_bits(&bits)
}

/// Rescales to unit L1 or L2 norm. All-zero input is returned unchanged and
/// flagged degenerate.
pub fn normalize(d: &Descriptor, scheme: Normalization) -> Descriptor {
    let norm = match scheme {
        Normalization::None => return d.clone(),
        Normalization::L1 => d.values.iter().map(|x| x.abs()).sum::<f64>(),
        Normalization::L2 => d.values.iter().map(|x| x * x).sum::<f64>().sqrt(),
    };
    if !(norm > 0.0) {
        return Descriptor {
            normalization: scheme,
            degenerate: true,
            ..d.clone()
        };
    }
    Descriptor {
        values: d.values.iter().map(|x| x / norm).collect(),
        source: d.source,
        normalization: scheme,
        degenerate: false,
    }
}
