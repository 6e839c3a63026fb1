//! Gaussian-binary RBM with a learned diagonal precision.
//!
//! Energy, with `lambda = exp(z)` and `s = sqrt(lambda)`:
//!
//! ```text
//! E(v, h) = 1/2 v' diag(lambda) v - v' diag(lambda) a - h' b - v' diag(s) W h
//! p(h_j = 1 | v) = sigmoid((v .* s)' W + b)_j
//! p(v | h)       = N(W h ./ s + a, diag(1 / lambda))
//! ```
//!
//! The coupling uses `diag(s)` so that both conditionals above hold exactly.

mod rmsprop;
mod train;

pub use rmsprop::{RmspropState, RMSPROP_EPS};
pub use train::{
    cd1_gradient, preprocess_patches, sparsity_gradient, sparsity_penalty, train_grbm,
    train_grbm_on_rows, Cd1Outcome, EpochDiagnostics, GrbmTrainConfig, GrbmTrained, Reconstruction,
    SPARSITY_EPS,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, sigmoid, softplus};

/// Largest hidden layer for which the partition function is enumerated.
pub const MAX_ENUM_HIDDEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct GrbmParams {
    /// `n_visible x n_hidden`
    pub w: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    /// Log precision: `lambda_i = exp(z_i)`.
    pub z: Array1<f64>,
}

/// Same shapes as [`GrbmParams`]; used for gradients and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct GrbmGradients {
    pub w: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub z: Array1<f64>,
}

impl GrbmGradients {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        GrbmGradients {
            w: Array2::zeros((n_visible, n_hidden)),
            a: Array1::zeros(n_visible),
            b: Array1::zeros(n_hidden),
            z: Array1::zeros(n_visible),
        }
    }

    pub fn add_assign(&mut self, other: &GrbmGradients) {
        self.w += &other.w;
        self.a += &other.a;
        self.b += &other.b;
        self.z += &other.z;
    }

    pub fn max_abs(&self) -> f64 {
        [&self.a, &self.b, &self.z]
            .iter()
            .flat_map(|x| x.iter())
            .chain(self.w.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub(crate) fn slices(&self) -> [&[f64]; 4] {
        [
            self.w.as_slice().expect("standard layout"),
            self.a.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
            self.z.as_slice().expect("standard layout"),
        ]
    }
}

impl GrbmParams {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        GrbmParams {
            w: Array2::zeros((n_visible, n_hidden)),
            a: Array1::zeros(n_visible),
            b: Array1::zeros(n_hidden),
            z: Array1::zeros(n_visible),
        }
    }

    /// Weights drawn from `N(0, init_std^2)`, biases and log precisions zero.
    pub fn init<R: Rng>(n_visible: usize, n_hidden: usize, init_std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, init_std).expect("init_std must be finite and non-negative");
        let mut p = Self::zeros(n_visible, n_hidden);
        p.w.iter_mut().for_each(|w| *w = normal.sample(rng));
        p
    }

    pub fn n_visible(&self) -> usize {
        self.a.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.b.len()
    }

    pub fn precision(&self) -> Array1<f64> {
        self.z.mapv(f64::exp)
    }

    /// `lambda^(1/2)`, the per-pixel input scaling.
    pub fn sqrt_precision(&self) -> Array1<f64> {
        self.z.mapv(|z| (0.5 * z).exp())
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .chain(&self.z)
            .all(|v| v.is_finite())
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.a.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
            self.z.as_slice_mut().expect("standard layout"),
        ]
    }

    fn check_visible(&self, len: usize) -> Result<()> {
        if len != self.n_visible() {
            return Err(Error::arg(format!(
                "visible vector has {len} entries, model has {}",
                self.n_visible()
            )));
        }
        Ok(())
    }

    fn check_hidden(&self, len: usize) -> Result<()> {
        if len != self.n_hidden() {
            return Err(Error::arg(format!(
                "hidden vector has {len} entries, model has {}",
                self.n_hidden()
            )));
        }
        Ok(())
    }

    pub fn energy(&self, v: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<f64> {
        self.check_visible(v.len())?;
        self.check_hidden(h.len())?;
        let lam = self.precision();
        let s = self.sqrt_precision();
        let wh = self.w.dot(&h);
        let mut e = -h.dot(&self.b);
        for i in 0..v.len() {
            e += 0.5 * lam[i] * v[i] * v[i] - lam[i] * v[i] * self.a[i] - v[i] * s[i] * wh[i];
        }
        Ok(e)
    }

    /// Hidden pre-activations `(v .* s)' W + b`.
    pub fn hidden_input(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_visible(v.len())?;
        Ok((&v * &self.sqrt_precision()).dot(&self.w) + &self.b)
    }

    pub fn hidden_given_visible(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.hidden_input(v)?.mapv(sigmoid))
    }

    /// Row-wise hidden pre-activations for a batch.
    pub fn hidden_input_batch(&self, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_visible(v.ncols())?;
        let scaled = &v * &self.sqrt_precision().view().insert_axis(Axis(0));
        Ok(scaled.dot(&self.w) + &self.b.view().insert_axis(Axis(0)))
    }

    pub fn hidden_given_visible_batch(&self, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.hidden_input_batch(v)?.mapv(sigmoid))
    }

    /// Mean and per-coordinate variance of `p(v | h)`.
    pub fn visible_given_hidden(&self, h: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        self.check_hidden(h.len())?;
        let s = self.sqrt_precision();
        let mean = self.w.dot(&h) / &s + &self.a;
        let var = self.z.mapv(|z| (-z).exp());
        Ok((mean, var))
    }

    /// Draws `v ~ p(v | h)`.
    pub fn sample_visible<R: Rng>(&self, h: ArrayView1<f64>, rng: &mut R) -> Result<Array1<f64>> {
        let (mean, var) = self.visible_given_hidden(h)?;
        Ok(Zip::from(&mean).and(&var).map_collect(|&m, &v| {
            let n: f64 = rand_distr::StandardNormal.sample(rng);
            m + v.sqrt() * n
        }))
    }

    /// `F(v) = -log sum_h exp(-E(v, h))`.
    pub fn free_energy(&self, v: ArrayView1<f64>) -> Result<f64> {
        let x = self.hidden_input(v)?;
        let lam = self.precision();
        let quad: f64 = (0..v.len())
            .map(|i| 0.5 * lam[i] * v[i] * v[i] - lam[i] * v[i] * self.a[i])
            .sum();
        Ok(quad - x.iter().map(|&t| softplus(t)).sum::<f64>())
    }

    pub fn free_energy_grad_v(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        let hm = self.hidden_given_visible(v)?;
        let lam = self.precision();
        let s = self.sqrt_precision();
        Ok(&lam * &(&v - &self.a) - &(self.w.dot(&hm) * &s))
    }

    /// `-dE/dtheta` at a fixed `(v, h)`; `h` may hold Bernoulli means.
    pub fn energy_neg_grad(&self, v: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<GrbmGradients> {
        self.check_visible(v.len())?;
        self.check_hidden(h.len())?;
        let lam = self.precision();
        let s = self.sqrt_precision();
        let vs = &v * &s;
        let wh = self.w.dot(&h);
        let w = vs
            .view()
            .insert_axis(Axis(1))
            .dot(&h.view().insert_axis(Axis(0)));
        let a = &lam * &v;
        let z = Array1::from_shape_fn(v.len(), |i| {
            -0.5 * lam[i] * v[i] * v[i] + lam[i] * v[i] * self.a[i] + 0.5 * s[i] * v[i] * wh[i]
        });
        Ok(GrbmGradients {
            w,
            a,
            b: h.to_owned(),
            z,
        })
    }

    /// Exact `log Z` by enumerating hidden states and integrating the
    /// Gaussian over `v` in closed form for each.
    pub fn exact_log_partition(&self) -> Result<f64> {
        let nh = self.n_hidden();
        if nh > MAX_ENUM_HIDDEN {
            return Err(Error::arg(format!(
                "exact partition function needs n_hidden <= {MAX_ENUM_HIDDEN}, got {nh}"
            )));
        }
        let nv = self.n_visible();
        let lam = self.precision();
        let s = self.sqrt_precision();
        // For fixed h: min_v E = -1/2 sum lambda m^2 - b'h with m = a + Wh/s.
        let mut terms = Vec::with_capacity(1 << nh);
        let mut wh = Array1::<f64>::zeros(nv);
        let mut bh = 0.0;
        let mut state = 0usize;
        for step in 0..(1usize << nh) {
            if step > 0 {
                // Gray code: flip the lowest set bit of step.
                let j = step.trailing_zeros() as usize;
                let sign = if state & (1 << j) == 0 { 1.0 } else { -1.0 };
                state ^= 1 << j;
                wh.scaled_add(sign, &self.w.column(j));
                bh += sign * self.b[j];
            }
            let neg_min: f64 = (0..nv)
                .map(|i| {
                    let m = self.a[i] + wh[i] / s[i];
                    0.5 * lam[i] * m * m
                })
                .sum::<f64>()
                + bh;
            terms.push(neg_min);
        }
        let gauss = 0.5 * nv as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * self.z.sum();
        Ok(log_sum_exp(&terms) + gauss)
    }
}
