//! CD-style mcRBM training with an HMC negative phase.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{hmc_sample_rows, HmcConfig, McrbmArch, McrbmGradients, McrbmParams};
use crate::dataset::{resample_patch, PatchSet};
use crate::error::{Error, Result};
use crate::preprocess::{MeanMode, Whitener, EPS_EIG};
use crate::rng;

const INIT_TAG: u64 = 11;
const SHUFFLE_TAG: u64 = 12;
const HMC_TAG: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McrbmTrainConfig {
    pub epochs: usize,
    /// Epoch from which the pooling matrix starts learning.
    pub p_update_start: usize,
    /// Keep P at its initial value for the whole run.
    pub freeze_p: bool,
    pub lr: f64,
    /// Learning-rate multiplier for P.
    pub lr_p_scale: f64,
    pub batch_size: usize,
    pub hmc: HmcConfig,
    pub seed: u64,
    pub c_init_std: f64,
    pub w_init_std: f64,
    pub p_init_std: f64,
    /// Decay of the running average that sets the common filter norm.
    pub norm_decay: f64,
    pub resample_side: usize,
    pub whiten_retain: f64,
    pub eps_eig: f64,
}

impl Default for McrbmTrainConfig {
    fn default() -> Self {
        McrbmTrainConfig {
            epochs: 100,
            p_update_start: 50,
            freeze_p: false,
            lr: 0.01,
            lr_p_scale: 0.1,
            batch_size: 128,
            hmc: HmcConfig::default(),
            seed: 0,
            c_init_std: 0.05,
            w_init_std: 0.05,
            p_init_std: 0.01,
            norm_decay: 0.95,
            resample_side: 16,
            whiten_retain: 0.99,
            eps_eig: EPS_EIG,
        }
    }
}

impl McrbmTrainConfig {
    /// Defaults for `arch`: P is frozen for topographic layouts, and starts
    /// learning halfway through otherwise.
    pub fn for_arch(arch: &McrbmArch) -> Self {
        McrbmTrainConfig {
            freeze_p: arch.topographic,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_p_scale >= 0.0) {
            return Err(Error::Config("lr must be > 0 and lr_p_scale >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.norm_decay) {
            return Err(Error::Config("norm_decay must be in [0,1)".into()));
        }
        self.hmc.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McrbmEpoch {
    pub epoch: usize,
    pub accept_rate: f64,
    pub step_size: f64,
    pub mean_free_energy: f64,
    pub mean_cov_activation: f64,
    pub p_updated: bool,
}

#[derive(Debug, Clone)]
pub struct McrbmTrained {
    pub params: McrbmParams,
    /// Present when training started from raw patches.
    pub whitener: Option<Whitener>,
    pub diagnostics: Vec<McrbmEpoch>,
}

/// Enforces the parameter constraints in place and returns the filter norm used.
///
/// * P is clipped to be non-positive.
/// * Every column of C is rescaled to `c_norm` (the mean column norm when `None`).
/// * With `normalize_p_columns`, each non-zero column of P is rescaled to unit L1 norm.
pub fn project_constraints(
    p: &mut McrbmParams,
    normalize_p_columns: bool,
    c_norm: Option<f64>,
) -> f64 {
    p.p.mapv_inplace(|x| x.min(0.0));
    let norms: Vec<f64> =
        p.c.columns()
            .into_iter()
            .map(|c| c.dot(&c).sqrt())
            .collect();
    let target = c_norm.unwrap_or_else(|| norms.iter().sum::<f64>() / norms.len().max(1) as f64);
    for (mut col, &n) in p.c.columns_mut().into_iter().zip(&norms) {
        if n > 0.0 {
            col *= target / n;
        }
    }
    if normalize_p_columns {
        for mut col in p.p.columns_mut() {
            let l1: f64 = col.iter().map(|x| x.abs()).sum();
            if l1 > 0.0 {
                col /= l1;
            }
        }
    }
    target
}

fn resample_rows(set: &PatchSet, side: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((set.len(), side * side));
    for (mut row, p) in out.rows_mut().into_iter().zip(set.patches()) {
        for (dst, v) in row.iter_mut().zip(resample_patch(p, side)?) {
            *dst = v;
        }
    }
    Ok(out)
}

/// Resamples, fits a patchwise-centered PCA whitener and trains on the
/// whitened data. The whitener is returned with the model.
pub fn train_mcrbm(
    patches: &PatchSet,
    arch: &McrbmArch,
    cfg: &McrbmTrainConfig,
) -> Result<McrbmTrained> {
    let raw = resample_rows(patches, cfg.resample_side)?;
    let whitener = Whitener::fit(
        raw.view(),
        cfg.whiten_retain,
        MeanMode::PerSample,
        cfg.eps_eig,
    )?;
    let data = whitener.apply_rows(raw.view())?;
    let mut trained = train_mcrbm_on_rows(data.view(), arch, cfg)?;
    trained.whitener = Some(whitener);
    Ok(trained)
}

fn apply_update(
    p: &mut McrbmParams,
    pos: &McrbmGradients,
    neg: &McrbmGradients,
    lr: f64,
    lr_p: Option<f64>,
) {
    // ascent on log-likelihood: theta += lr * (<dF/dtheta>_model - <dF/dtheta>_data)
    let upd2 = |t: &mut Array2<f64>, gp: &Array2<f64>, gn: &Array2<f64>, r: f64| {
        Zip::from(t)
            .and(gp)
            .and(gn)
            .for_each(|t, &a, &b| *t += r * (b - a));
    };
    let upd1 = |t: &mut ndarray::Array1<f64>,
                gp: &ndarray::Array1<f64>,
                gn: &ndarray::Array1<f64>,
                r: f64| {
        Zip::from(t)
            .and(gp)
            .and(gn)
            .for_each(|t, &a, &b| *t += r * (b - a));
    };
    upd2(&mut p.c, &pos.c, &neg.c, lr);
    upd1(&mut p.cov_bias, &pos.cov_bias, &neg.cov_bias, lr);
    upd2(&mut p.w, &pos.w, &neg.w, lr);
    upd1(&mut p.a, &pos.a, &neg.a, lr);
    upd1(&mut p.b, &pos.b, &neg.b, lr);
    if let Some(r) = lr_p {
        upd2(&mut p.p, &pos.p, &neg.p, r);
    }
}

fn scale_grads(g: &mut McrbmGradients, s: f64) {
    g.c *= s;
    g.p *= s;
    g.cov_bias *= s;
    g.w *= s;
    g.a *= s;
    g.b *= s;
}

/// Trains on rows that are already whitened.
pub fn train_mcrbm_on_rows(
    data: ArrayView2<f64>,
    arch: &McrbmArch,
    cfg: &McrbmTrainConfig,
) -> Result<McrbmTrained> {
    cfg.validate()?;
    let (n, nv) = data.dim();
    if n == 0 {
        return Err(Error::arg("no training data"));
    }
    let mut params = McrbmParams::init(
        nv,
        arch,
        cfg.c_init_std,
        cfg.w_init_std,
        cfg.p_init_std,
        &mut rng::stream(cfg.seed, &[INIT_TAG]),
    )?;
    let normalize_p = !arch.topographic;
    let mut c_norm = project_constraints(&mut params, false, None);

    let mut hmc = cfg.hmc;
    let mut order: Vec<usize> = (0..n).collect();
    let mut diagnostics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let p_learns = !cfg.freeze_p && epoch >= cfg.p_update_start;
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_TAG, epoch as u64]));
        let (mut accepted, mut fe_sum, mut act_sum) = (0.0, 0.0, 0.0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select(Axis(0), idx);
            let mut rngs: Vec<_> = (0..idx.len())
                .map(|row| rng::stream(cfg.seed, &[HMC_TAG, epoch as u64, bi as u64, row as u64]))
                .collect();
            let neg_v = hmc_sample_rows(&params, batch.view(), &mut hmc, &mut rngs)?;
            let rate = neg_v.accept_rate();
            accepted += rate * idx.len() as f64;
            fe_sum += params.free_energy_rows(batch.view()).sum();
            act_sum += params
                .cov_hidden_given_visible_rows(batch.view())?
                .mean()
                .unwrap_or(0.0)
                * idx.len() as f64;

            let inv = 1.0 / idx.len() as f64;
            let mut pos = params.free_energy_param_grad_sum(batch.view());
            let mut neg = params.free_energy_param_grad_sum(neg_v.v.view());
            scale_grads(&mut pos, inv);
            scale_grads(&mut neg, inv);
            apply_update(
                &mut params,
                &pos,
                &neg,
                cfg.lr,
                p_learns.then_some(cfg.lr * cfg.lr_p_scale),
            );

            let mean_norm = params
                .c
                .columns()
                .into_iter()
                .map(|c| c.dot(&c).sqrt())
                .sum::<f64>()
                / params.n_factors().max(1) as f64;
            c_norm = cfg.norm_decay * c_norm + (1.0 - cfg.norm_decay) * mean_norm;
            project_constraints(&mut params, normalize_p && p_learns, Some(c_norm));
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    what: "mcRBM parameters".into(),
                    epoch,
                    batch: bi,
                });
            }
            hmc.adapt(rate);
        }
        let d = McrbmEpoch {
            epoch,
            accept_rate: accepted / n as f64,
            step_size: hmc.step_size,
            mean_free_energy: fe_sum / n as f64,
            mean_cov_activation: act_sum / n as f64,
            p_updated: p_learns,
        };
        log::info!(
            "mcrbm epoch {epoch}: accept {:.3} step {:.4} F {:.4} act {:.4}",
            d.accept_rate,
            d.step_size,
            d.mean_free_energy,
            d.mean_cov_activation
        );
        diagnostics.push(d);
    }
    Ok(McrbmTrained {
        params,
        whitener: None,
        diagnostics,
    })
}
