//! Distances between descriptors.

use serde::{Deserialize, Serialize};

use crate::descriptor::{BinaryDescriptor, Normalization};
use crate::error::{Error, Result};

/// Clamp applied to Bernoulli parameters before taking logs.
pub const JSD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    L1,
    L2,
    Jsd,
    Hamming,
}

impl Metric {
    pub fn code(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Jsd => "jsd",
            Metric::Hamming => "hamming",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "jsd" => Ok(Metric::Jsd),
            "hamming" => Ok(Metric::Hamming),
            _ => Err(Error::arg(format!(
                "unknown metric {s:?} (l1, l2, jsd, hamming)"
            ))),
        }
    }
}

/// A metric together with the descriptor normalization applied before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistanceKind {
    pub metric: Metric,
    pub normalization: Normalization,
}

impl DistanceKind {
    pub fn new(metric: Metric, normalization: Normalization) -> Result<Self> {
        match (metric, normalization) {
            (Metric::Jsd, n) if n != Normalization::None => Err(Error::arg(
                "JSD compares raw activations; normalization must be none",
            )),
            (Metric::Hamming, n) if n != Normalization::None => Err(Error::arg(
                "Hamming distance takes binary descriptors; normalization must be none",
            )),
            _ => Ok(DistanceKind {
                metric,
                normalization,
            }),
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.metric.code(), self.normalization.code())
    }
}

fn same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::arg(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn l1_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum())
}

pub fn l2_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x, y)?;
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// `sum_j KL(B(p_j) || B(m_j)) / 2 + KL(B(q_j) || B(m_j)) / 2`, `m = (p+q)/2`, in nats.
pub fn jsd_bernoulli(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let kl = |a: f64, m: f64| a * (a / m).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - m)).ln();
    Ok(p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = a.clamp(JSD_EPS, 1.0 - JSD_EPS);
            let b = b.clamp(JSD_EPS, 1.0 - JSD_EPS);
            let m = 0.5 * (a + b);
            // rounding can push tiny values below zero
            (0.5 * kl(a, m) + 0.5 * kl(b, m)).max(0.0)
        })
        .sum())
}

pub fn hamming(x: &BinaryDescriptor, y: &BinaryDescriptor) -> Result<u32> {
    if x.width() != y.width() {
        return Err(Error::arg(format!(
            "width mismatch: {} vs {}",
            x.width(),
            y.width()
        )));
    }
    Ok(x.words()
        .iter()
        .zip(y.words())
        .map(|(a, b)| (a ^ b).count_ones())
        .sum())
}
