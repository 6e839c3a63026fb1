//! Mean-covariance RBM.
//!
//! The covariance part pools squared filter responses:
//!
//! ```text
//! E_c(v, h_c) = -((C' v)^2)' P h_c - c' h_c          (P <= 0)
//! p(h_c | v)  = sigmoid(P' (C' v)^2 + c)
//! ```
//!
//! and the mean part is a Gaussian RBM with unit precision. Free energy:
//!
//! ```text
//! F(v) = 1/2 v'v - a'v - sum softplus(b + W'v) - sum softplus(c + P'(C'v)^2)
//! ```

mod hmc;
mod topography;
mod train;

pub use hmc::{
    hmc_sample, hmc_sample_rows, leapfrog, HmcConfig, HmcOutcome, Potential, RowsOutcome,
};
pub use topography::init_topography;
pub use train::{
    project_constraints, train_mcrbm, train_mcrbm_on_rows, McrbmEpoch, McrbmTrainConfig,
    McrbmTrained,
};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

/// Layer sizes and pooling layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McrbmArch {
    pub n_mean: usize,
    pub n_factors: usize,
    pub n_cov: usize,
    pub topographic: bool,
    pub neighborhood: usize,
    pub stride: usize,
}

impl McrbmArch {
    /// 256 mean units, 512 factors, 512 covariance units, free pooling.
    pub const LARGE: McrbmArch = McrbmArch {
        n_mean: 256,
        n_factors: 512,
        n_cov: 512,
        topographic: false,
        neighborhood: 0,
        stride: 0,
    };

    /// 64 mean units, 576 factors on a 24x24 grid, 64 covariance units
    /// pooling 5x5 neighborhoods at stride 3.
    pub const COMPACT: McrbmArch = McrbmArch {
        n_mean: 64,
        n_factors: 576,
        n_cov: 64,
        topographic: true,
        neighborhood: 5,
        stride: 3,
    };

    pub fn preset(name: &str) -> Result<McrbmArch> {
        match name {
            "large" | "256-512-512" => Ok(Self::LARGE),
            "compact" | "64-576-64" => Ok(Self::COMPACT),
            _ => Err(Error::Config(format!(
                "unknown mcrbm architecture {name:?} (expected large or compact)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McrbmParams {
    /// `n_visible x n_factors` filters.
    pub c: Array2<f64>,
    /// `n_factors x n_cov` pooling, non-positive.
    pub p: Array2<f64>,
    /// Covariance-unit biases.
    pub cov_bias: Array1<f64>,
    /// `n_visible x n_mean`
    pub w: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

/// Gradients of the free energy, same layout as [`McrbmParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct McrbmGradients {
    pub c: Array2<f64>,
    pub p: Array2<f64>,
    pub cov_bias: Array1<f64>,
    pub w: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

/// Positive-semidefinite precision of `p(v | h_c)` and whether it is all zero.
#[derive(Debug, Clone)]
pub struct VisiblePrecision {
    pub matrix: Array2<f64>,
    pub degenerate: bool,
}

impl McrbmParams {
    pub fn zeros(n_visible: usize, arch: &McrbmArch) -> Self {
        McrbmParams {
            c: Array2::zeros((n_visible, arch.n_factors)),
            p: Array2::zeros((arch.n_factors, arch.n_cov)),
            cov_bias: Array1::zeros(arch.n_cov),
            w: Array2::zeros((n_visible, arch.n_mean)),
            a: Array1::zeros(n_visible),
            b: Array1::zeros(arch.n_mean),
        }
    }

    /// Random filters, pooling from the topography (or small negative
    /// noise), zero biases.
    pub fn init<R: Rng>(
        n_visible: usize,
        arch: &McrbmArch,
        c_std: f64,
        w_std: f64,
        p_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut m = Self::zeros(n_visible, arch);
        let nc = Normal::new(0.0, c_std).map_err(|e| Error::arg(e.to_string()))?;
        let nw = Normal::new(0.0, w_std).map_err(|e| Error::arg(e.to_string()))?;
        let np = Normal::new(0.0, p_std).map_err(|e| Error::arg(e.to_string()))?;
        m.c.iter_mut().for_each(|x| *x = nc.sample(rng));
        m.w.iter_mut().for_each(|x| *x = nw.sample(rng));
        if arch.topographic {
            m.p = init_topography(arch)?;
        } else {
            m.p.iter_mut().for_each(|x| *x = -np.sample(rng).abs());
        }
        Ok(m)
    }

    pub fn n_visible(&self) -> usize {
        self.a.len()
    }

    pub fn n_factors(&self) -> usize {
        self.c.ncols()
    }

    pub fn n_cov(&self) -> usize {
        self.cov_bias.len()
    }

    pub fn n_mean(&self) -> usize {
        self.b.len()
    }

    pub fn is_finite(&self) -> bool {
        self.c
            .iter()
            .chain(&self.p)
            .chain(&self.cov_bias)
            .chain(&self.w)
            .chain(&self.a)
            .chain(&self.b)
            .all(|v| v.is_finite())
    }

    fn check_visible(&self, n: usize) -> Result<()> {
        if n != self.n_visible() {
            return Err(Error::arg(format!(
                "visible vector has {n} entries, model has {}",
                self.n_visible()
            )));
        }
        Ok(())
    }

    fn check_len(&self, n: usize, want: usize, what: &str) -> Result<()> {
        if n != want {
            return Err(Error::arg(format!(
                "{what} has {n} entries, model has {want}"
            )));
        }
        Ok(())
    }

    /// Covariance-part energy `E_c(v, h_c)`.
    pub fn crbm_energy(&self, v: ArrayView1<f64>, hc: ArrayView1<f64>) -> Result<f64> {
        self.check_visible(v.len())?;
        self.check_len(hc.len(), self.n_cov(), "covariance hidden vector")?;
        let u = v.dot(&self.c).mapv(|f| f * f);
        Ok(-u.dot(&self.p.dot(&hc)) - self.cov_bias.dot(&hc))
    }

    /// Mean-part energy with unit precision.
    pub fn mean_energy(&self, v: ArrayView1<f64>, hm: ArrayView1<f64>) -> Result<f64> {
        self.check_visible(v.len())?;
        self.check_len(hm.len(), self.n_mean(), "mean hidden vector")?;
        Ok(0.5 * v.dot(&v) - v.dot(&self.a) - hm.dot(&self.b) - v.dot(&self.w.dot(&hm)))
    }

    /// Joint energy `E_m + E_c`.
    pub fn energy(
        &self,
        v: ArrayView1<f64>,
        hm: ArrayView1<f64>,
        hc: ArrayView1<f64>,
    ) -> Result<f64> {
        Ok(self.mean_energy(v, hm)? + self.crbm_energy(v, hc)?)
    }

    pub fn cov_hidden_given_visible(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_visible(v.len())?;
        let u = v.dot(&self.c).mapv(|f| f * f);
        Ok((u.dot(&self.p) + &self.cov_bias).mapv(sigmoid))
    }

    pub fn mean_hidden_given_visible(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_visible(v.len())?;
        Ok((v.dot(&self.w) + &self.b).mapv(sigmoid))
    }

    /// Row-wise covariance-unit activations.
    pub fn cov_hidden_given_visible_rows(&self, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_visible(v.ncols())?;
        let u = v.dot(&self.c).mapv(|f| f * f);
        Ok((u.dot(&self.p) + &self.cov_bias.view().insert_axis(Axis(0))).mapv(sigmoid))
    }

    /// `C diag(-P h_c) C'`. Analysis only.
    pub fn visible_precision(&self, hc: ArrayView1<f64>) -> Result<VisiblePrecision> {
        self.check_len(hc.len(), self.n_cov(), "covariance hidden vector")?;
        let d = self.p.dot(&hc).mapv(|x| -x);
        let scaled = &self.c * &d.view().insert_axis(Axis(0));
        let matrix = scaled.dot(&self.c.t());
        let degenerate = matrix.iter().all(|&x| x == 0.0);
        Ok(VisiblePrecision { matrix, degenerate })
    }

    /// `Sigma W h_m` with `Sigma` the inverse of [`Self::visible_precision`].
    /// Only meant for tiny instances; fails if the precision is singular.
    pub fn visible_mean_given_hidden(
        &self,
        hm: ArrayView1<f64>,
        hc: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        self.check_len(hm.len(), self.n_mean(), "mean hidden vector")?;
        let prec = self.visible_precision(hc)?;
        let n = self.n_visible();
        let m = DMatrix::from_fn(n, n, |i, j| prec.matrix[[i, j]]);
        let rhs = self.w.dot(&hm);
        let x = m
            .lu()
            .solve(&nalgebra::DVector::from_iterator(n, rhs.iter().copied()))
            .ok_or_else(|| Error::arg("visible precision is singular"))?;
        Ok(Array1::from_iter(x.iter().copied()))
    }

    pub fn free_energy(&self, v: ArrayView1<f64>) -> Result<f64> {
        self.check_visible(v.len())?;
        let xm = v.dot(&self.w) + &self.b;
        let u = v.dot(&self.c).mapv(|f| f * f);
        let y = u.dot(&self.p) + &self.cov_bias;
        Ok(0.5 * v.dot(&v)
            - self.a.dot(&v)
            - xm.iter().map(|&x| softplus(x)).sum::<f64>()
            - y.iter().map(|&x| softplus(x)).sum::<f64>())
    }

    pub fn free_energy_grad_v(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_visible(v.len())?;
        Ok(self
            .free_energy_grad_rows(v.insert_axis(Axis(0)))
            .index_axis_move(Axis(0), 0))
    }

    /// Row-wise free energies.
    pub fn free_energy_rows(&self, v: ArrayView2<f64>) -> Array1<f64> {
        let xm = v.dot(&self.w) + &self.b.view().insert_axis(Axis(0));
        let y = v.dot(&self.c).mapv(|f| f * f).dot(&self.p)
            + &self.cov_bias.view().insert_axis(Axis(0));
        let quad = v.map_axis(Axis(1), |r| 0.5 * r.dot(&r) - r.dot(&self.a));
        let sm = xm.map_axis(Axis(1), |r| r.iter().map(|&x| softplus(x)).sum::<f64>());
        let sc = y.map_axis(Axis(1), |r| r.iter().map(|&x| softplus(x)).sum::<f64>());
        quad - sm - sc
    }

    /// Row-wise `dF/dv`.
    pub fn free_energy_grad_rows(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let f = v.dot(&self.c);
        let sc = (f.mapv(|x| x * x).dot(&self.p) + &self.cov_bias.view().insert_axis(Axis(0)))
            .mapv(sigmoid);
        let sm = (v.dot(&self.w) + &self.b.view().insert_axis(Axis(0))).mapv(sigmoid);
        let pooled = sc.dot(&self.p.t()) * &f;
        let mut g = v.to_owned();
        g -= &self.a.view().insert_axis(Axis(0));
        g -= &sm.dot(&self.w.t());
        g.scaled_add(-2.0, &pooled.dot(&self.c.t()));
        g
    }

    /// Sum over rows of `dF/dtheta`.
    pub fn free_energy_param_grad_sum(&self, v: ArrayView2<f64>) -> McrbmGradients {
        let f = v.dot(&self.c);
        let u = f.mapv(|x| x * x);
        let sc = (u.dot(&self.p) + &self.cov_bias.view().insert_axis(Axis(0))).mapv(sigmoid);
        let sm = (v.dot(&self.w) + &self.b.view().insert_axis(Axis(0))).mapv(sigmoid);
        let pooled = sc.dot(&self.p.t()) * &f;
        McrbmGradients {
            c: v.t().dot(&pooled) * -2.0,
            p: -u.t().dot(&sc),
            cov_bias: -sc.sum_axis(Axis(0)),
            w: -v.t().dot(&sm),
            a: -v.sum_axis(Axis(0)),
            b: -sm.sum_axis(Axis(0)),
        }
    }

    /// Returns a copy with the pooling matrix divided by `factor`.
    pub fn scale_p(&self, factor: f64) -> Result<McrbmParams> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::arg(format!(
                "P scale factor must be positive, got {factor}"
            )));
        }
        let mut out = self.clone();
        out.p.mapv_inplace(|x| x / factor);
        Ok(out)
    }
}

impl Potential for McrbmParams {
    fn dim(&self) -> usize {
        self.n_visible()
    }

    fn energy_rows(&self, v: ArrayView2<f64>) -> Array1<f64> {
        self.free_energy_rows(v)
    }

    fn grad_rows(&self, v: ArrayView2<f64>) -> Array2<f64> {
        self.free_energy_grad_rows(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn random_params(
        nv: usize,
        nm: usize,
        nf: usize,
        nc: usize,
        seed: u64,
    ) -> McrbmParams {
        let arch = McrbmArch {
            n_mean: nm,
            n_factors: nf,
            n_cov: nc,
            topographic: false,
            neighborhood: 0,
            stride: 0,
        };
        let mut r = crate::rng::stream(seed, &[]);
        let mut p = McrbmParams::init(nv, &arch, 0.5, 0.5, 0.5, &mut r).unwrap();
        p.a.iter_mut().for_each(|x| *x = r.random_range(-0.5..0.5));
        p.b.iter_mut().for_each(|x| *x = r.random_range(-0.5..0.5));
        p.cov_bias
            .iter_mut()
            .for_each(|x| *x = r.random_range(-0.5..1.5));
        p
    }

    #[test]
    fn crbm_energy_cases() {
        let p = random_params(3, 2, 4, 2, 1);
        assert_eq!(
            p.crbm_energy(array![1.0, 2.0, 3.0].view(), array![0.0, 0.0].view())
                .unwrap(),
            0.0
        );

        let arch = McrbmArch {
            n_mean: 0,
            n_factors: 2,
            n_cov: 2,
            topographic: false,
            neighborhood: 0,
            stride: 0,
        };
        let mut q = McrbmParams::zeros(2, &arch);
        q.c = Array2::eye(2);
        q.p = -Array2::eye(2);
        let e = q
            .crbm_energy(array![1.0, 2.0].view(), array![1.0, 1.0].view())
            .unwrap();
        assert!((e - 5.0).abs() < 1e-15);
    }

    #[test]
    fn crbm_energy_matches_loops() {
        let p = random_params(3, 2, 4, 3, 2);
        let v = array![0.4, -1.0, 0.7];
        let hc = array![1.0, 0.0, 1.0];
        let mut e = 0.0;
        for f in 0..4 {
            let resp: f64 = (0..3).map(|i| v[i] * p.c[[i, f]]).sum();
            for k in 0..3 {
                e -= resp * resp * p.p[[f, k]] * hc[k];
            }
        }
        for k in 0..3 {
            e -= p.cov_bias[k] * hc[k];
        }
        assert!((p.crbm_energy(v.view(), hc.view()).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn cov_hidden_cases() {
        let mut p = random_params(3, 2, 4, 3, 3);
        p.cov_bias.fill(0.0);
        let h = p.cov_hidden_given_visible(Array1::zeros(3).view()).unwrap();
        assert!(h.iter().all(|&x| x == 0.5));

        // large input along filter 0 drives every unit pooling it towards 0
        let p = random_params(3, 2, 4, 3, 4);
        let dir = p.c.column(0).to_owned();
        let h = p.cov_hidden_given_visible((&dir * 1e3).view()).unwrap();
        for k in 0..3 {
            if p.p[[0, k]] < -1e-3 {
                assert!(h[k] < 1e-6);
            }
        }

        let v = array![0.3, 0.9, -0.2];
        let h = p.cov_hidden_given_visible(v.view()).unwrap();
        for k in 0..3 {
            let mut y = p.cov_bias[k];
            for f in 0..4 {
                let r: f64 = (0..3).map(|i| v[i] * p.c[[i, f]]).sum();
                y += p.p[[f, k]] * r * r;
            }
            assert!((h[k] - 1.0 / (1.0 + (-y).exp())).abs() < 1e-12);
        }
        let neg = p.cov_hidden_given_visible((-&v).view()).unwrap();
        assert_eq!(h, neg);
    }

    #[test]
    fn precision_cases() {
        let p = random_params(4, 2, 5, 3, 5);
        let z = p.visible_precision(Array1::zeros(3).view()).unwrap();
        assert!(z.degenerate);

        let arch = McrbmArch {
            n_mean: 1,
            n_factors: 3,
            n_cov: 3,
            topographic: false,
            neighborhood: 0,
            stride: 0,
        };
        let mut q = McrbmParams::zeros(3, &arch);
        q.c = Array2::eye(3);
        q.p = -Array2::eye(3);
        let m = q.visible_precision(Array1::ones(3).view()).unwrap();
        assert_eq!(m.matrix, Array2::<f64>::eye(3));
        assert!(!m.degenerate);
        q.w = array![[1.0], [2.0], [3.0]];
        let mean = q
            .visible_mean_given_hidden(array![1.0].view(), Array1::ones(3).view())
            .unwrap();
        assert_eq!(mean, array![1.0, 2.0, 3.0]);
    }

    #[test]
    fn free_energy_at_origin() {
        let p = random_params(3, 2, 4, 3, 6);
        let want = -p.b.iter().map(|&b| softplus(b)).sum::<f64>()
            - p.cov_bias.iter().map(|&c| softplus(c)).sum::<f64>();
        assert!((p.free_energy(Array1::zeros(3).view()).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn grad_without_filters_is_linear() {
        let mut p = random_params(3, 2, 4, 3, 7);
        p.w.fill(0.0);
        p.c.fill(0.0);
        let v = array![1.0, -2.0, 0.5];
        let g = p.free_energy_grad_v(v.view()).unwrap();
        assert!(g
            .iter()
            .zip((&v - &p.a).iter())
            .all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn covariance_gradient_is_odd() {
        let mut p = random_params(3, 2, 4, 3, 8);
        p.a.fill(0.0);
        p.b.fill(0.0);
        p.w.fill(0.0);
        let v = array![0.3, -0.8, 1.2];
        let g = p.free_energy_grad_v(v.view()).unwrap();
        let gn = p.free_energy_grad_v((-&v).view()).unwrap();
        assert!(g.iter().zip(gn.iter()).all(|(x, y)| (x + y).abs() < 1e-14));
    }

    #[test]
    fn rows_agree_with_single_vector_route() {
        let p = random_params(4, 3, 5, 2, 9);
        let mut r = crate::rng::stream(10, &[]);
        let v = Array2::from_shape_fn((3, 4), |_| r.random_range(-1.0..1.0));
        let fe = p.free_energy_rows(v.view());
        for (k, row) in v.rows().into_iter().enumerate() {
            assert!((fe[k] - p.free_energy(row).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_p_behaviour() {
        let p = random_params(3, 2, 4, 3, 11);
        assert_eq!(p.scale_p(1.0).unwrap(), p);
        let s = p.scale_p(3.0).unwrap();
        assert!(s
            .p
            .iter()
            .zip(p.p.iter())
            .all(|(a, b)| (a - b / 3.0).abs() < 1e-15));
        assert!(p.scale_p(0.0).is_err());
        let v = array![0.5, -1.0, 2.0];
        let h0 = p.cov_hidden_given_visible(v.view()).unwrap();
        let h1 = s.cov_hidden_given_visible(v.view()).unwrap();
        assert!(h1.iter().zip(h0.iter()).all(|(a, b)| a >= b));
    }

    #[test]
    fn dimension_errors() {
        let p = random_params(3, 2, 4, 3, 12);
        assert!(p
            .crbm_energy(array![1.0].view(), array![0.0, 0.0, 0.0].view())
            .is_err());
        assert!(p.free_energy(array![1.0, 2.0].view()).is_err());
    }
}
