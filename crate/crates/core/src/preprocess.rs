//! Per-patch brightness/contrast normalization and PCA whitening.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Patches whose standard deviation is below this are treated as flat.
pub const EPS_STD: f64 = 1e-8;
/// Default cutoff below which covariance eigenvalues are dropped.
pub const EPS_EIG: f64 = 1e-10;

/// Subtracts the mean and divides by the population standard deviation.
///
/// Flat inputs (std below [`EPS_STD`]) map to the zero vector.
pub fn normalize_patch(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd >= EPS_STD) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// How each sample is centered before the covariance is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanMode {
    /// Subtract each sample's own mean (patchwise DC removal).
    PerSample,
    /// Leave samples as they are.
    None,
}

impl MeanMode {
    pub fn code(self) -> f64 {
        match self {
            MeanMode::PerSample => 0.0,
            MeanMode::None => 1.0,
        }
    }

    pub fn from_code(c: f64) -> Result<Self> {
        match c {
            0.0 => Ok(MeanMode::PerSample),
            1.0 => Ok(MeanMode::None),
            _ => Err(Error::arg(format!("unknown mean mode code {c}"))),
        }
    }
}

/// A fitted PCA whitening transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    pub mean_mode: MeanMode,
    /// `d_in x k`: eigenvectors scaled by `eigenvalue^-1/2`.
    pub basis: Array2<f64>,
    /// `k x d_in`: the inverse map back to input space (for visualization).
    pub inv_basis: Array2<f64>,
    /// Kept eigenvalues, descending.
    pub eigenvalues: Array1<f64>,
    pub variance_retained: f64,
    /// Components that met the variance target but fell below `eps_eig`.
    pub dropped_components: usize,
}

impl Whitener {
    /// Fits on `samples` (one sample per row), keeping the smallest number of
    /// leading components whose eigenvalue mass reaches `retain`.
    pub fn fit(
        samples: ArrayView2<f64>,
        retain: f64,
        mean_mode: MeanMode,
        eps_eig: f64,
    ) -> Result<Self> {
        if !(retain > 0.0 && retain <= 1.0) {
            return Err(Error::arg(format!("retain must be in (0,1], got {retain}")));
        }
        let (n, d) = samples.dim();
        if n < 2 || d == 0 {
            return Err(Error::arg(format!(
                "need at least 2 samples of nonzero width, got {n}x{d}"
            )));
        }
        let mut x = samples.to_owned();
        if mean_mode == MeanMode::PerSample {
            for mut row in x.rows_mut() {
                let m = row.mean().unwrap_or(0.0);
                row -= m;
            }
        }
        let col_mean = x.mean_axis(Axis(0)).expect("n >= 2");
        x -= &col_mean;
        let cov = x.t().dot(&x) / n as f64;

        let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let total: f64 = vals.iter().sum();
        if !(total > 0.0) {
            return Err(Error::arg("samples have zero variance"));
        }

        let mut k = 0;
        let mut mass = 0.0;
        while k < d && mass / total < retain - 1e-12 {
            mass += vals[k];
            k += 1;
        }
        let keep = (0..k).take_while(|&i| vals[i] >= eps_eig).count();
        let dropped = k - keep;
        if keep == 0 {
            return Err(Error::arg(
                "no principal component above the eigenvalue cutoff",
            ));
        }

        let mut basis = Array2::zeros((d, keep));
        let mut inv_basis = Array2::zeros((keep, d));
        for (c, &src) in order.iter().take(keep).enumerate() {
            let s = vals[c].sqrt();
            for r in 0..d {
                let e = eig.eigenvectors[(r, src)];
                basis[[r, c]] = e / s;
                inv_basis[[c, r]] = e * s;
            }
        }
        let kept_mass: f64 = vals[..keep].iter().sum();
        Ok(Whitener {
            mean_mode,
            basis,
            inv_basis,
            eigenvalues: Array1::from(vals[..keep].to_vec()),
            variance_retained: kept_mass / total,
            dropped_components: dropped,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Centers `v` per the mean mode, projects and scales.
    pub fn apply(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::arg(format!(
                "whitener expects {} inputs, got {}",
                self.input_dim(),
                v.len()
            )));
        }
        let centered = match self.mean_mode {
            MeanMode::PerSample => {
                let m = v.mean().unwrap_or(0.0);
                v.mapv(|x| x - m)
            }
            MeanMode::None => v.to_owned(),
        };
        Ok(centered.dot(&self.basis))
    }

    /// Whitens every row of `x`.
    pub fn apply_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::arg(format!(
                "whitener expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut c = x.to_owned();
        if self.mean_mode == MeanMode::PerSample {
            for mut row in c.rows_mut() {
                let m = row.mean().unwrap_or(0.0);
                row -= m;
            }
        }
        Ok(c.dot(&self.basis))
    }
}
