//! Hybrid Monte Carlo on a free-energy surface.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An energy over row vectors, evaluated for many rows at once.
pub trait Potential {
    fn dim(&self) -> usize;
    fn energy_rows(&self, v: ArrayView2<f64>) -> Array1<f64>;
    fn grad_rows(&self, v: ArrayView2<f64>) -> Array2<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub n_leapfrog: usize,
    pub step_size: f64,
    pub target_acceptance: f64,
    /// Multiplicative step-size change per adaptation (0.02 -> x1.02 / x0.98).
    pub adapt_rate: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            n_leapfrog: 20,
            step_size: 0.01,
            target_acceptance: 0.9,
            adapt_rate: 0.02,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "HMC step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config(
                "HMC target acceptance must be in (0,1)".into(),
            ));
        }
        if !(self.adapt_rate >= 0.0 && self.adapt_rate < 1.0) {
            return Err(Error::Config("HMC adapt rate must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Nudges the step size towards the target acceptance rate.
    pub fn adapt(&mut self, accept_rate: f64) {
        if accept_rate > self.target_acceptance {
            self.step_size *= 1.0 + self.adapt_rate;
        } else if accept_rate < self.target_acceptance {
            self.step_size *= 1.0 - self.adapt_rate;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcOutcome {
    pub v: Array1<f64>,
    pub accepted: bool,
    /// `H(end) - H(start)`; NaN/inf when the trajectory blew up.
    pub delta_h: f64,
}

/// Result of advancing several independent chains by one HMC transition.
#[derive(Debug, Clone)]
pub struct RowsOutcome {
    pub v: Array2<f64>,
    pub accepted: Vec<bool>,
    pub delta_h: Vec<f64>,
    pub non_finite: usize,
}

impl RowsOutcome {
    pub fn accept_rate(&self) -> f64 {
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len().max(1) as f64
    }
}

/// `n_steps` leapfrog steps of size `step` on `H = U(v) + |m|^2 / 2`, in place.
pub fn leapfrog<P: Potential + ?Sized>(
    pot: &P,
    v: &mut Array2<f64>,
    m: &mut Array2<f64>,
    step: f64,
    n_steps: usize,
) {
    if n_steps == 0 {
        return;
    }
    let mut g = pot.grad_rows(v.view());
    m.scaled_add(-0.5 * step, &g);
    for i in 0..n_steps {
        v.scaled_add(step, m);
        g = pot.grad_rows(v.view());
        let w = if i + 1 == n_steps { 0.5 * step } else { step };
        m.scaled_add(-w, &g);
    }
}

/// One HMC transition for each row of `v0`; row `k` draws its momentum and
/// acceptance uniform from `rngs[k]`. Rows whose Hamiltonian is non-finite
/// are rejected; if any occur the step size is halved.
pub fn hmc_sample_rows<P: Potential + ?Sized, R: Rng>(
    pot: &P,
    v0: ArrayView2<f64>,
    cfg: &mut HmcConfig,
    rngs: &mut [R],
) -> Result<RowsOutcome> {
    cfg.validate()?;
    let (n, d) = v0.dim();
    if d != pot.dim() {
        return Err(Error::arg(format!(
            "HMC state has {d} dims, potential has {}",
            pot.dim()
        )));
    }
    if rngs.len() != n {
        return Err(Error::arg(format!(
            "need one generator per row: {} rows, {} generators",
            n,
            rngs.len()
        )));
    }
    let mut m0 = Array2::<f64>::zeros((n, d));
    for (mut row, r) in m0.rows_mut().into_iter().zip(rngs.iter_mut()) {
        row.iter_mut().for_each(|x| *x = StandardNormal.sample(r));
    }
    let h0 = pot.energy_rows(v0) + m0.map_axis(Axis(1), |r| 0.5 * r.dot(&r));
    let mut v = v0.to_owned();
    let mut m = m0;
    leapfrog(pot, &mut v, &mut m, cfg.step_size, cfg.n_leapfrog);
    let h1 = pot.energy_rows(v.view()) + m.map_axis(Axis(1), |r| 0.5 * r.dot(&r));

    let mut accepted = Vec::with_capacity(n);
    let mut delta_h = Vec::with_capacity(n);
    let mut non_finite = 0;
    for k in 0..n {
        let dh = h1[k] - h0[k];
        let u: f64 = rngs[k].random();
        let ok = if dh.is_finite() && v.row(k).iter().all(|x| x.is_finite()) {
            dh <= 0.0 || u < (-dh).exp()
        } else {
            non_finite += 1;
            false
        };
        if !ok {
            v.row_mut(k).assign(&v0.row(k));
        }
        accepted.push(ok);
        delta_h.push(dh);
    }
    if non_finite > 0 {
        cfg.step_size *= 0.5;
        log::warn!(
            "HMC: {non_finite} non-finite trajectories, step size halved to {}",
            cfg.step_size
        );
    }
    Ok(RowsOutcome {
        v,
        accepted,
        delta_h,
        non_finite,
    })
}

/// One HMC transition of a single chain.
pub fn hmc_sample<P: Potential + ?Sized, R: Rng>(
    v0: ArrayView1<f64>,
    pot: &P,
    cfg: &mut HmcConfig,
    rng: &mut R,
) -> Result<HmcOutcome> {
    let out = hmc_sample_rows(pot, v0.insert_axis(Axis(0)), cfg, std::slice::from_mut(rng))?;
    Ok(HmcOutcome {
        v: out.v.index_axis_move(Axis(0), 0),
        accepted: out.accepted[0],
        delta_h: out.delta_h[0],
    })
}
