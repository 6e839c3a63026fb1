//! CD-1 training with an optional lifetime-sparsity penalty and rmsprop.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GrbmGradients, GrbmParams, RmspropState};
use crate::dataset::{resample_patch, PatchSet};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::preprocess::normalize_patch;
use crate::rng;

/// Clamp applied to batch activation rates inside the sparsity logs.
pub const SPARSITY_EPS: f64 = 1e-6;

const INIT_TAG: u64 = 1;
const SHUFFLE_TAG: u64 = 2;
const CD_TAG: u64 = 3;

/// How the negative-phase visible state is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reconstruction {
    /// Draw `v'` from `p(v | h)`.
    Sampled,
    /// Use the mean of `p(v | h)`.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrbmTrainConfig {
    pub n_hidden: usize,
    pub lr: f64,
    pub rmsprop_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub sparsity_target: f64,
    pub sparsity_penalty: f64,
    /// Restrict the sparsity gradient to hidden biases.
    pub sparsity_bias_only: bool,
    pub init_std: f64,
    pub seed: u64,
    pub resample_side: usize,
    pub reconstruction: Reconstruction,
}

impl Default for GrbmTrainConfig {
    fn default() -> Self {
        GrbmTrainConfig {
            n_hidden: 512,
            lr: 0.001,
            rmsprop_decay: 0.9,
            batch_size: 128,
            epochs: 10,
            sparsity_target: 0.05,
            sparsity_penalty: 0.0,
            sparsity_bias_only: false,
            init_std: 0.1,
            seed: 0,
            resample_side: 16,
            reconstruction: Reconstruction::Sampled,
        }
    }
}

impl GrbmTrainConfig {
    /// The sparse variant: same recipe with `lambda_sp = 0.2`.
    pub fn sparse() -> Self {
        GrbmTrainConfig {
            sparsity_penalty: 0.2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_hidden == 0 {
            return bad("n_hidden must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.sparsity_target > 0.0 && self.sparsity_target < 1.0) {
            return bad("sparsity_target must be in (0,1)");
        }
        if !(self.sparsity_penalty >= 0.0) {
            return bad("sparsity_penalty must be >= 0");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.rmsprop_decay) {
            return bad("lr must be > 0 and rmsprop_decay in [0,1)");
        }
        if !(self.init_std >= 0.0) {
            return bad("init_std must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    /// Mean squared error between data and reconstruction means.
    pub recon_error: f64,
    /// Mean positive-phase hidden activation.
    pub mean_activation: f64,
    /// Fraction of samples with no hidden mean above 0.5.
    pub dead_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct GrbmTrained {
    pub params: GrbmParams,
    pub diagnostics: Vec<EpochDiagnostics>,
}

/// Result of one CD-1 estimate on a minibatch.
#[derive(Debug, Clone)]
pub struct Cd1Outcome {
    pub grad: GrbmGradients,
    /// Positive-phase hidden means, one row per sample.
    pub hidden_pos: Array2<f64>,
    pub recon_error: f64,
}

/// Resamples each patch and applies per-patch normalization; one row per patch.
pub fn preprocess_patches(set: &PatchSet, side: usize) -> Result<Array2<f64>> {
    let d = side * side;
    let mut out = Array2::zeros((set.len(), d));
    for (mut row, p) in out.rows_mut().into_iter().zip(set.patches()) {
        let v = normalize_patch(&resample_patch(p, side)?);
        row.assign(&Array1::from(v));
    }
    Ok(out)
}

/// Summed `-dE/dtheta` over the rows of `v`, with hidden means `h`.
fn neg_energy_grad_sum(p: &GrbmParams, v: ArrayView2<f64>, h: ArrayView2<f64>) -> GrbmGradients {
    let lam = p.precision();
    let s = p.sqrt_precision();
    let vs = &v * &s.view().insert_axis(Axis(0));
    let w = vs.t().dot(&h);
    let a = v.sum_axis(Axis(0)) * &lam;
    let b = h.sum_axis(Axis(0));
    let wh = h.dot(&p.w.t());
    let mut z = Array1::zeros(p.n_visible());
    for (vr, whr) in v.rows().into_iter().zip(wh.rows()) {
        Zip::from(&mut z)
            .and(&vr)
            .and(&whr)
            .and(&lam)
            .and(&s)
            .and(&p.a)
            .for_each(|zi, &vi, &whi, &l, &si, &ai| {
                *zi += -0.5 * l * vi * vi + l * vi * ai + 0.5 * si * vi * whi;
            });
    }
    GrbmGradients { w, a, b, z }
}

/// CD-1 estimate of the log-likelihood gradient, averaged over the batch.
pub fn cd1_gradient<R: Rng>(
    batch: ArrayView2<f64>,
    p: &GrbmParams,
    reconstruction: Reconstruction,
    rng: &mut R,
) -> Result<Cd1Outcome> {
    let n = batch.nrows();
    if n == 0 {
        return Err(Error::arg("empty batch"));
    }
    let h_pos = p.hidden_given_visible_batch(batch)?;
    let h_sample = h_pos.mapv(|q| if rng.random::<f64>() < q { 1.0 } else { 0.0 });
    let s = p.sqrt_precision();
    let recon_mean =
        h_sample.dot(&p.w.t()) / &s.view().insert_axis(Axis(0)) + &p.a.view().insert_axis(Axis(0));
    let v_neg = match reconstruction {
        Reconstruction::Mean => recon_mean.clone(),
        Reconstruction::Sampled => {
            let sd = p.z.mapv(|z| (-0.5 * z).exp());
            let mut v = recon_mean.clone();
            for mut row in v.rows_mut() {
                Zip::from(&mut row).and(&sd).for_each(|x, &sdi| {
                    let e: f64 = StandardNormal.sample(rng);
                    *x += sdi * e;
                });
            }
            v
        }
    };
    let h_neg = p.hidden_given_visible_batch(v_neg.view())?;

    let mut grad = neg_energy_grad_sum(p, batch, h_pos.view());
    let neg = neg_energy_grad_sum(p, v_neg.view(), h_neg.view());
    let inv = 1.0 / n as f64;
    grad.w = (grad.w - neg.w) * inv;
    grad.a = (grad.a - neg.a) * inv;
    grad.b = (grad.b - neg.b) * inv;
    grad.z = (grad.z - neg.z) * inv;

    let recon_error = (&batch - &recon_mean).mapv(|d| d * d).mean().unwrap_or(0.0);
    Ok(Cd1Outcome {
        grad,
        hidden_pos: h_pos,
        recon_error,
    })
}

/// `lambda_sp * sum_j [rho log q_j + (1 - rho) log(1 - q_j)]`, `q_j` the
/// batch-mean activation of hidden unit `j` (clamped to `[eps, 1 - eps]`).
pub fn sparsity_penalty(
    batch: ArrayView2<f64>,
    p: &GrbmParams,
    rho: f64,
    lambda_sp: f64,
) -> Result<f64> {
    let q = p
        .hidden_given_visible_batch(batch)?
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::arg("empty batch"))?;
    Ok(lambda_sp
        * q.iter()
            .map(|&qj| {
                let qj = qj.clamp(SPARSITY_EPS, 1.0 - SPARSITY_EPS);
                rho * qj.ln() + (1.0 - rho) * (1.0 - qj).ln()
            })
            .sum::<f64>())
}

/// Ascent direction of [`sparsity_penalty`] w.r.t. `b` and (unless
/// `bias_only`) `W`. The `a` and `z` entries are zero.
pub fn sparsity_gradient(
    batch: ArrayView2<f64>,
    p: &GrbmParams,
    rho: f64,
    lambda_sp: f64,
    bias_only: bool,
) -> Result<GrbmGradients> {
    let n = batch.nrows();
    if n == 0 {
        return Err(Error::arg("empty batch"));
    }
    if !(rho > 0.0 && rho < 1.0) || !(lambda_sp >= 0.0) {
        return Err(Error::arg(format!(
            "invalid sparsity settings rho={rho}, lambda={lambda_sp}"
        )));
    }
    let mut g = GrbmGradients::zeros(p.n_visible(), p.n_hidden());
    if lambda_sp == 0.0 {
        return Ok(g);
    }
    let x = p.hidden_input_batch(batch)?;
    let sig = x.mapv(sigmoid);
    let q = sig.mean_axis(Axis(0)).expect("n > 0");
    let dq = q.mapv(|qj| {
        let qj = qj.clamp(SPARSITY_EPS, 1.0 - SPARSITY_EPS);
        lambda_sp * (rho / qj - (1.0 - rho) / (1.0 - qj))
    });
    // d sigma / dx, weighted by dPenalty/dq_j and averaged over rows
    let mut dx = sig.mapv(|s| s * (1.0 - s));
    dx *= &dq.view().insert_axis(Axis(0));
    dx /= n as f64;
    g.b = dx.sum_axis(Axis(0));
    if !bias_only {
        let vs = &batch * &p.sqrt_precision().view().insert_axis(Axis(0));
        g.w = vs.t().dot(&dx);
    }
    Ok(g)
}

/// Full training run on patches: resample, normalize, then CD-1 + rmsprop.
pub fn train_grbm(patches: &PatchSet, cfg: &GrbmTrainConfig) -> Result<GrbmTrained> {
    let data = preprocess_patches(patches, cfg.resample_side)?;
    train_grbm_on_rows(data.view(), cfg)
}

/// Trains on already-preprocessed rows.
pub fn train_grbm_on_rows(data: ArrayView2<f64>, cfg: &GrbmTrainConfig) -> Result<GrbmTrained> {
    cfg.validate()?;
    let (n, nv) = data.dim();
    if n == 0 {
        return Err(Error::arg("no training data"));
    }
    let mut params = GrbmParams::init(
        nv,
        cfg.n_hidden,
        cfg.init_std,
        &mut rng::stream(cfg.seed, &[INIT_TAG]),
    );
    let mut opt = RmspropState::new(&[nv * cfg.n_hidden, nv, cfg.n_hidden, nv]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut diagnostics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_TAG, epoch as u64]));
        let (mut err_sum, mut act_sum, mut dead) = (0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select(Axis(0), idx);
            let mut cd_rng = rng::stream(cfg.seed, &[CD_TAG, epoch as u64, bi as u64]);
            let mut out = cd1_gradient(batch.view(), &params, cfg.reconstruction, &mut cd_rng)?;
            if cfg.sparsity_penalty > 0.0 {
                let sp = sparsity_gradient(
                    batch.view(),
                    &params,
                    cfg.sparsity_target,
                    cfg.sparsity_penalty,
                    cfg.sparsity_bias_only,
                )?;
                out.grad.add_assign(&sp);
            }
            err_sum += out.recon_error * idx.len() as f64;
            act_sum += out.hidden_pos.sum();
            dead += out
                .hidden_pos
                .rows()
                .into_iter()
                .filter(|r| r.iter().all(|&h| h <= 0.5))
                .count();

            opt.step(
                &mut params.slices_mut(),
                &out.grad.slices(),
                cfg.lr,
                cfg.rmsprop_decay,
            );
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    what: "GRBM parameters".into(),
                    epoch,
                    batch: bi,
                });
            }
        }
        let d = EpochDiagnostics {
            epoch,
            recon_error: err_sum / n as f64,
            mean_activation: act_sum / (n * cfg.n_hidden) as f64,
            dead_fraction: dead as f64 / n as f64,
        };
        log::info!(
            "grbm epoch {epoch}: recon {:.5} act {:.4} dead {:.4}",
            d.recon_error,
            d.mean_activation,
            d.dead_fraction
        );
        diagnostics.push(d);
    }
    Ok(GrbmTrained {
        params,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_params(nv: usize, nh: usize, seed: u64) -> GrbmParams {
        let mut r = rng::stream(seed, &[]);
        let mut p = GrbmParams::init(nv, nh, 0.4, &mut r);
        p.a.iter_mut().for_each(|x| *x = r.random_range(-0.5..0.5));
        p.b.iter_mut().for_each(|x| *x = r.random_range(-0.5..0.5));
        p.z.iter_mut().for_each(|x| *x = r.random_range(-0.5..0.5));
        p
    }

    fn random_batch(n: usize, nv: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, &[]);
        Array2::from_shape_fn((n, nv), |_| r.random_range(-1.5..1.5))
    }

    #[test]
    fn empty_batch_rejected() {
        let p = random_params(3, 2, 1);
        let empty = Array2::<f64>::zeros((0, 3));
        let mut r = rng::stream(0, &[]);
        assert!(cd1_gradient(empty.view(), &p, Reconstruction::Sampled, &mut r).is_err());
        assert!(sparsity_gradient(empty.view(), &p, 0.05, 0.2, false).is_err());
    }

    #[test]
    fn fixed_point_gives_zero_gradient() {
        // W = 0 and a = v: the mean reconstruction reproduces v exactly and
        // hidden means are the same in both phases.
        let v = array![[0.3, -0.2, 1.1]];
        let mut p = GrbmParams::zeros(3, 4);
        p.a = v.row(0).to_owned();
        p.b = array![-40.0, 40.0, 0.3, -1.0];
        p.z = array![0.1, -0.2, 0.5];
        let mut r = rng::stream(5, &[]);
        let out = cd1_gradient(v.view(), &p, Reconstruction::Mean, &mut r).unwrap();
        assert_eq!(out.grad.max_abs(), 0.0);
    }

    #[test]
    fn positive_phase_bias_statistic() {
        let p = random_params(5, 3, 2);
        let batch = random_batch(7, 5, 3);
        let mut r = rng::stream(1, &[]);
        let out = cd1_gradient(batch.view(), &p, Reconstruction::Sampled, &mut r).unwrap();
        for (k, row) in batch.rows().into_iter().enumerate() {
            let hm = p.hidden_given_visible(row).unwrap();
            for j in 0..3 {
                assert!((out.hidden_pos[[k, j]] - hm[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_statistics_match_single_sample_route() {
        let p = random_params(4, 3, 4);
        let batch = random_batch(6, 4, 5);
        let h = p.hidden_given_visible_batch(batch.view()).unwrap();
        let sum = neg_energy_grad_sum(&p, batch.view(), h.view());
        let mut acc = GrbmGradients::zeros(4, 3);
        for (v, hr) in batch.rows().into_iter().zip(h.rows()) {
            acc.add_assign(&p.energy_neg_grad(v, hr).unwrap());
        }
        let diff = GrbmGradients {
            w: &sum.w - &acc.w,
            a: &sum.a - &acc.a,
            b: &sum.b - &acc.b,
            z: &sum.z - &acc.z,
        };
        assert!(diff.max_abs() < 1e-12);
    }

    #[test]
    fn sparsity_trivial_cases() {
        let p = random_params(4, 3, 6);
        let batch = random_batch(5, 4, 7);
        let g = sparsity_gradient(batch.view(), &p, 0.05, 0.0, false).unwrap();
        assert_eq!(g.max_abs(), 0.0);

        // W = 0 and b_0 = logit(rho): q_0 = rho exactly, so unit 0 is stationary.
        let mut q = GrbmParams::zeros(4, 2);
        let rho: f64 = 0.25;
        q.b[0] = (rho / (1.0 - rho)).ln();
        q.b[1] = 1.0;
        let g = sparsity_gradient(batch.view(), &q, rho, 0.2, false).unwrap();
        assert!(g.b[0].abs() < 1e-12);
        assert!(g.w.column(0).iter().all(|x| x.abs() < 1e-12));
        assert!(g.b[1] < 0.0);
    }

    #[test]
    fn bias_only_leaves_weights() {
        let p = random_params(4, 3, 8);
        let batch = random_batch(5, 4, 9);
        let g = sparsity_gradient(batch.view(), &p, 0.05, 0.2, true).unwrap();
        assert_eq!(g.w.iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
        assert!(g.b.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let batch = random_batch(10, 4, 10);
        let cfg = GrbmTrainConfig {
            n_hidden: 3,
            epochs: 0,
            seed: 42,
            ..Default::default()
        };
        let t = train_grbm_on_rows(batch.view(), &cfg).unwrap();
        assert!(t
            .params
            .a
            .iter()
            .chain(&t.params.b)
            .chain(&t.params.z)
            .all(|&x| x == 0.0));
        let sd = (t.params.w.mapv(|x| x * x).mean().unwrap()).sqrt();
        assert!(sd > 0.0 && sd < 0.3);
        assert!(t.diagnostics.is_empty());
    }

    #[test]
    fn divergence_is_reported() {
        let batch = random_batch(16, 4, 11) * 1e200;
        let cfg = GrbmTrainConfig {
            n_hidden: 3,
            epochs: 1,
            batch_size: 8,
            ..Default::default()
        };
        match train_grbm_on_rows(batch.view(), &cfg) {
            Err(Error::NonFinite { epoch, batch, .. }) => assert_eq!((epoch, batch), (0, 0)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
