//! The matching benchmark: pair distances, ROC and the 95% error rate.
//!
//! The threshold is the nearest-rank 95th percentile of the matching-pair
//! distances (the `ceil(0.95 n)`-th smallest). Non-matching pairs at or
//! below it count as incorrect.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::dataset::LabeledPair;
use crate::descriptor::{normalize, BinaryDescriptor, Descriptor};
use crate::error::{Error, Result};
use crate::metrics::{hamming, jsd_bernoulli, l1_distance, l2_distance, DistanceKind, Metric};

/// Descriptors keyed by patch id.
#[derive(Debug, Clone, PartialEq)]
pub enum DescriptorSet {
    Real(BTreeMap<usize, Descriptor>),
    Binary(BTreeMap<usize, BinaryDescriptor>),
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        match self {
            DescriptorSet::Real(m) => m.len(),
            DescriptorSet::Binary(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scene: String,
    pub n_pairs: usize,
    pub n_match: usize,
    pub n_nonmatch: usize,
    pub kind: DistanceKind,
    pub threshold_95: f64,
    pub error_rate_95: f64,
    /// `(false positive rate, true positive rate)`, ascending.
    pub roc: Vec<(f64, f64)>,
    pub config_fingerprint: String,
}

/// Rank of the 95% threshold among `n` sorted match distances (1-based).
fn rank_95(n: usize) -> usize {
    (95 * n).div_ceil(100)
}

/// Returns `(threshold, error rate in percent)`.
pub fn error_rate_at_95(match_d: &[f64], nonmatch_d: &[f64]) -> Result<(f64, f64)> {
    if match_d.is_empty() || nonmatch_d.is_empty() {
        return Err(Error::arg("both distance lists must be non-empty"));
    }
    if match_d.iter().chain(nonmatch_d).any(|d| d.is_nan()) {
        return Err(Error::arg("distances contain NaN"));
    }
    let mut m = match_d.to_vec();
    let k = rank_95(m.len());
    let (_, &mut threshold, _) = m.select_nth_unstable_by(k - 1, f64::total_cmp);
    let wrong = nonmatch_d.iter().filter(|&&d| d <= threshold).count();
    Ok((threshold, 100.0 * wrong as f64 / nonmatch_d.len() as f64))
}

/// One ROC point per distinct distance, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(match_d: &[f64], nonmatch_d: &[f64]) -> Result<Vec<(f64, f64)>> {
    if match_d.is_empty() || nonmatch_d.is_empty() {
        return Err(Error::arg("both distance lists must be non-empty"));
    }
    let mut all: Vec<(f64, bool)> = match_d
        .iter()
        .map(|&d| (d, true))
        .chain(nonmatch_d.iter().map(|&d| (d, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nm, nn) = (match_d.len() as f64, nonmatch_d.len() as f64);
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0.total_cmp(&t).is_eq() {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((fp as f64 / nn, tp as f64 / nm));
    }
    Ok(out)
}

/// Distance between two stored descriptors under `kind`.
pub fn pair_distance(set: &DescriptorSet, a: usize, b: usize, kind: DistanceKind) -> Result<f64> {
    let missing = |id: usize| Error::arg(format!("no descriptor for patch {id}"));
    match (set, kind.metric) {
        (DescriptorSet::Binary(m), Metric::Hamming) => {
            let x = m.get(&a).ok_or_else(|| missing(a))?;
            let y = m.get(&b).ok_or_else(|| missing(b))?;
            Ok(hamming(x, y)? as f64)
        }
        (DescriptorSet::Binary(_), _) => Err(Error::arg(format!(
            "binary descriptors need the hamming metric, not {}",
            kind.metric.code()
        ))),
        (DescriptorSet::Real(_), Metric::Hamming) => Err(Error::arg(
            "hamming distance needs binary descriptors; binarize the model first",
        )),
        (DescriptorSet::Real(m), metric) => {
            let x = normalize(m.get(&a).ok_or_else(|| missing(a))?, kind.normalization);
            let y = normalize(m.get(&b).ok_or_else(|| missing(b))?, kind.normalization);
            match metric {
                Metric::L1 => l1_distance(&x.values, &y.values),
                Metric::L2 => l2_distance(&x.values, &y.values),
                Metric::Jsd => jsd_bernoulli(&x.values, &y.values),
                Metric::Hamming => unreachable!(),
            }
        }
    }
}

/// Fingerprint of the descriptor provenance plus the evaluation settings.
pub fn fingerprint(provenance: &str, kind: DistanceKind, pairs: &[LabeledPair]) -> String {
    let mut h = Sha256::new();
    h.update(provenance.as_bytes());
    h.update(kind.label().as_bytes());
    for p in pairs {
        h.update((p.a as u64).to_le_bytes());
        h.update((p.b as u64).to_le_bytes());
        h.update([p.is_match as u8]);
    }
    hex::encode(h.finalize())
}

/// Scores every pair and builds the report.
pub fn evaluate(
    descriptors: &DescriptorSet,
    pairs: &[LabeledPair],
    kind: DistanceKind,
    scene: &str,
    provenance: &str,
) -> Result<EvalReport> {
    let kind = DistanceKind::new(kind.metric, kind.normalization)?;
    let (mut md, mut nd) = (Vec::new(), Vec::new());
    for p in pairs {
        let d = pair_distance(descriptors, p.a, p.b, kind)?;
        if p.is_match {
            md.push(d);
        } else {
            nd.push(d);
        }
    }
    let (threshold_95, error_rate_95) = error_rate_at_95(&md, &nd)?;
    Ok(EvalReport {
        scene: scene.to_string(),
        n_pairs: pairs.len(),
        n_match: md.len(),
        n_nonmatch: nd.len(),
        kind,
        threshold_95,
        error_rate_95,
        roc: roc_curve(&md, &nd)?,
        config_fingerprint: fingerprint(provenance, kind, pairs),
    })
}

impl EvalReport {
    /// Key-value header followed by the ROC points.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scene: {}", self.scene);
        let _ = writeln!(s, "n_pairs: {}", self.n_pairs);
        let _ = writeln!(s, "n_match: {}", self.n_match);
        let _ = writeln!(s, "n_nonmatch: {}", self.n_nonmatch);
        let _ = writeln!(s, "metric: {}", self.kind.metric.code());
        let _ = writeln!(s, "normalization: {}", self.kind.normalization.code());
        let _ = writeln!(s, "threshold_95: {}", self.threshold_95);
        let _ = writeln!(s, "error_rate_95: {}", self.error_rate_95);
        let _ = writeln!(s, "fingerprint: {}", self.config_fingerprint);
        let _ = writeln!(s, "roc_points: {}", self.roc.len());
        for (f, t) in &self.roc {
            let _ = writeln!(s, "{f} {t}");
        }
        s
    }

    /// Tab-separated `method, train_set, test_set, rate` row.
    pub fn grid_row(&self, method: &str, train_set: &str) -> String {
        format!(
            "{method}\t{train_set}\t{}\t{:.2}",
            self.scene, self.error_rate_95
        )
    }

    /// Parses [`EvalReport::to_text`] output.
    pub fn parse(text: &str) -> Result<EvalReport> {
        let bad = |m: String| Error::arg(format!("report: {m}"));
        let mut lines = text.lines();
        let mut header = BTreeMap::new();
        for _ in 0..10 {
            let line = lines.next().ok_or_else(|| bad("truncated header".into()))?;
            let (k, v) = line
                .split_once(": ")
                .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| bad(format!("missing {k}")))
        };
        let num =
            |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| bad(format!("{k}: {e}"))) };
        let real =
            |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| bad(format!("{k}: {e}"))) };
        let kind = DistanceKind::new(get("metric")?.parse()?, get("normalization")?.parse()?)?;
        let n_roc = num("roc_points")?;
        let mut roc = Vec::with_capacity(n_roc.min(1 << 20));
        for _ in 0..n_roc {
            let line = lines
                .next()
                .ok_or_else(|| bad("truncated ROC list".into()))?;
            let (f, t) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed ROC point {line:?}")))?;
            let f: f64 = f.parse().map_err(|e| bad(format!("ROC fpr: {e}")))?;
            let t: f64 = t.parse().map_err(|e| bad(format!("ROC tpr: {e}")))?;
            roc.push((f, t));
        }
        Ok(EvalReport {
            scene: get("scene")?,
            n_pairs: num("n_pairs")?,
            n_match: num("n_match")?,
            n_nonmatch: num("n_nonmatch")?,
            kind,
            threshold_95: real("threshold_95")?,
            error_rate_95: real("error_rate_95")?,
            roc,
            config_fingerprint: get("fingerprint")?,
        })
    }
}
