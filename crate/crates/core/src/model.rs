//! Trained models as stored in a [`Container`], and descriptor extraction
//! from them.

use ndarray::Array1;
use rayon::prelude::*;

use crate::container::Container;
use crate::dataset::{resample_patch, Patch};
use crate::descriptor::{binarize, grbm_descriptor, BinaryDescriptor, Descriptor, Source};
use crate::error::{Error, Result};
use crate::grbm::{GrbmParams, GrbmTrainConfig};
use crate::mcrbm::{McrbmArch, McrbmParams, McrbmTrainConfig};
use crate::preprocess::{MeanMode, Whitener};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Grbm {
        params: GrbmParams,
        /// `Grbm` or `SpGrbm`.
        source: Source,
        config: GrbmTrainConfig,
    },
    Mcrbm {
        params: McrbmParams,
        arch: McrbmArch,
        whitener: Whitener,
        config: McrbmTrainConfig,
        /// Append mean-unit activations to the descriptor (ablation only).
        mean_units: bool,
    },
}

/// A model plus everything needed to reproduce its descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub body: ModelBody,
    pub threshold: Option<f64>,
    /// Scene directories the model was trained on.
    pub train_scenes: Vec<String>,
    /// Per-scene sample cap used when building the training pool.
    pub max_patches: Option<usize>,
}

fn json<T: serde::Serialize>(x: &T) -> String {
    serde_json::to_string(x).expect("config types serialize")
}

fn from_json<T: serde::de::DeserializeOwned>(c: &Container, name: &str) -> Result<T> {
    serde_json::from_str(c.text(name)?).map_err(|e| Error::Container(format!("{name}: {e}")))
}

impl Model {
    pub fn kind_code(&self) -> &'static str {
        match &self.body {
            ModelBody::Grbm { source, .. } => source.code(),
            ModelBody::Mcrbm { .. } => Source::McrbmCov.code(),
        }
    }

    pub fn source(&self) -> Source {
        match &self.body {
            ModelBody::Grbm { source, .. } => *source,
            ModelBody::Mcrbm { .. } => Source::McrbmCov,
        }
    }

    pub fn seed(&self) -> u64 {
        match &self.body {
            ModelBody::Grbm { config, .. } => config.seed,
            ModelBody::Mcrbm { config, .. } => config.seed,
        }
    }

    pub fn resample_side(&self) -> usize {
        match &self.body {
            ModelBody::Grbm { config, .. } => config.resample_side,
            ModelBody::Mcrbm { config, .. } => config.resample_side,
        }
    }

    /// Descriptor length.
    pub fn width(&self) -> usize {
        match &self.body {
            ModelBody::Grbm { params, .. } => params.n_hidden(),
            ModelBody::Mcrbm {
                params, mean_units, ..
            } => params.n_cov() + if *mean_units { params.n_mean() } else { 0 },
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.put_text("kind", self.kind_code());
        c.put_text("train/scenes", self.train_scenes.join("+"));
        if let Some(m) = self.max_patches {
            c.put_scalar("train/max_patches", m as f64);
        }
        if let Some(t) = self.threshold {
            c.put_scalar("binarize/threshold", t);
        }
        match &self.body {
            ModelBody::Grbm { params, config, .. } => {
                c.put_matrix("grbm/W", params.w.view());
                c.put_vector("grbm/a", params.a.view());
                c.put_vector("grbm/b", params.b.view());
                c.put_vector("grbm/z", params.z.view());
                c.put_text("preprocess/mode", "normalize");
                c.put_text("train/config", json(config));
            }
            ModelBody::Mcrbm {
                params,
                arch,
                whitener,
                config,
                mean_units,
            } => {
                c.put_matrix("mcrbm/C", params.c.view());
                c.put_matrix("mcrbm/P", params.p.view());
                c.put_vector("mcrbm/c", params.cov_bias.view());
                c.put_matrix("mcrbm/W", params.w.view());
                c.put_vector("mcrbm/a", params.a.view());
                c.put_vector("mcrbm/b", params.b.view());
                c.put_text("mcrbm/arch", json(arch));
                c.put_text("mcrbm/hmc", json(&config.hmc));
                c.put_text(
                    "mcrbm/mean_units",
                    if *mean_units { "true" } else { "false" },
                );
                c.put_text("preprocess/mode", "whiten");
                c.put_matrix("whitener/basis", whitener.basis.view());
                c.put_matrix("whitener/inv_basis", whitener.inv_basis.view());
                c.put_vector("whitener/eigenvalues", whitener.eigenvalues.view());
                c.put_scalar("whitener/mean_mode", whitener.mean_mode.code());
                c.put_scalar("whitener/variance_retained", whitener.variance_retained);
                c.put_scalar("whitener/dropped", whitener.dropped_components as f64);
                c.put_text("train/config", json(config));
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Model> {
        let kind = c.text("kind")?;
        let mode = c.text("preprocess/mode")?;
        let train_scenes = match c.text("train/scenes")? {
            "" => Vec::new(),
            s => s.split('+').map(str::to_string).collect(),
        };
        let max_patches = if c.contains("train/max_patches") {
            Some(count(c.scalar("train/max_patches")?, "train/max_patches")?)
        } else {
            None
        };
        let threshold = if c.contains("binarize/threshold") {
            Some(c.scalar("binarize/threshold")?)
        } else {
            None
        };
        let body = match kind {
            "grbm" | "spgrbm" => {
                if mode != "normalize" {
                    return Err(Error::Container(format!(
                        "{kind} model with {mode} preprocessing"
                    )));
                }
                let params = GrbmParams {
                    w: c.matrix("grbm/W")?,
                    a: c.vector("grbm/a")?,
                    b: c.vector("grbm/b")?,
                    z: c.vector("grbm/z")?,
                };
                let (nv, nh) = params.w.dim();
                if params.a.len() != nv || params.z.len() != nv || params.b.len() != nh {
                    return Err(Error::Container("GRBM array shapes disagree".into()));
                }
                let config: GrbmTrainConfig = from_json(c, "train/config")?;
                if config.resample_side * config.resample_side != nv {
                    return Err(Error::Container(format!(
                        "{nv} visible units do not match resample side {}",
                        config.resample_side
                    )));
                }
                let source = if kind == "grbm" {
                    Source::Grbm
                } else {
                    Source::SpGrbm
                };
                ModelBody::Grbm {
                    params,
                    source,
                    config,
                }
            }
            "mcrbm-cov" => {
                if mode != "whiten" {
                    return Err(Error::Container(format!(
                        "mcrbm model with {mode} preprocessing"
                    )));
                }
                let params = McrbmParams {
                    c: c.matrix("mcrbm/C")?,
                    p: c.matrix("mcrbm/P")?,
                    cov_bias: c.vector("mcrbm/c")?,
                    w: c.matrix("mcrbm/W")?,
                    a: c.vector("mcrbm/a")?,
                    b: c.vector("mcrbm/b")?,
                };
                let (nv, nf) = params.c.dim();
                let (pf, nc) = params.p.dim();
                let (wv, nm) = params.w.dim();
                if pf != nf
                    || wv != nv
                    || params.cov_bias.len() != nc
                    || params.a.len() != nv
                    || params.b.len() != nm
                {
                    return Err(Error::Container("mcRBM array shapes disagree".into()));
                }
                let whitener = Whitener {
                    mean_mode: MeanMode::from_code(c.scalar("whitener/mean_mode")?)?,
                    basis: c.matrix("whitener/basis")?,
                    inv_basis: c.matrix("whitener/inv_basis")?,
                    eigenvalues: c.vector("whitener/eigenvalues")?,
                    variance_retained: c.scalar("whitener/variance_retained")?,
                    dropped_components: count(c.scalar("whitener/dropped")?, "whitener/dropped")?,
                };
                let config: McrbmTrainConfig = from_json(c, "train/config")?;
                let (d_in, k) = whitener.basis.dim();
                if k != nv
                    || whitener.inv_basis.dim() != (k, d_in)
                    || whitener.eigenvalues.len() != k
                {
                    return Err(Error::Container(format!(
                        "whitener maps to {k} dims but the model has {nv} visible units"
                    )));
                }
                if config.resample_side * config.resample_side != d_in {
                    return Err(Error::Container(format!(
                        "whitener input {d_in} does not match resample side {}",
                        config.resample_side
                    )));
                }
                let mean_units = match c.text("mcrbm/mean_units")? {
                    "true" => true,
                    "false" => false,
                    other => return Err(Error::Container(format!("mcrbm/mean_units: {other:?}"))),
                };
                ModelBody::Mcrbm {
                    params,
                    arch: from_json(c, "mcrbm/arch")?,
                    whitener,
                    config,
                    mean_units,
                }
            }
            other => return Err(Error::Container(format!("unknown model kind {other:?}"))),
        };
        Ok(Model {
            body,
            threshold,
            train_scenes,
            max_patches,
        })
    }

    /// Real-valued descriptor of one patch. `p_scale` divides the mcRBM
    /// pooling matrix first (used for JSD); it is ignored for GRBMs.
    pub fn descriptor(&self, patch: &Patch, p_scale: f64) -> Result<Descriptor> {
        self.prepared(p_scale)?.descriptor(patch)
    }

    /// Descriptors for many patches, in order, computed in parallel.
    pub fn descriptors(&self, patches: &[&Patch], p_scale: f64) -> Result<Vec<Descriptor>> {
        let m = self.prepared(p_scale)?;
        patches.par_iter().map(|p| m.descriptor(p)).collect()
    }

    /// Binary descriptors using the stored threshold.
    pub fn binary_descriptors(&self, patches: &[&Patch]) -> Result<Vec<BinaryDescriptor>> {
        let t = self.threshold.ok_or_else(|| {
            Error::arg("model has no binarization threshold; run `patchrbm binarize` on it first")
        })?;
        Ok(self
            .descriptors(patches, 1.0)?
            .iter()
            .map(|d| binarize(d, t))
            .collect())
    }

    fn prepared(&self, p_scale: f64) -> Result<Prepared<'_>> {
        Ok(match &self.body {
            ModelBody::Mcrbm {
                params,
                whitener,
                config,
                mean_units,
                ..
            } if p_scale != 1.0 => Prepared {
                model: self,
                scaled: Some(params.scale_p(p_scale)?),
                whitener: Some(whitener),
                side: config.resample_side,
                mean_units: *mean_units,
            },
            ModelBody::Mcrbm {
                whitener,
                config,
                mean_units,
                ..
            } => Prepared {
                model: self,
                scaled: None,
                whitener: Some(whitener),
                side: config.resample_side,
                mean_units: *mean_units,
            },
            ModelBody::Grbm { config, .. } => Prepared {
                model: self,
                scaled: None,
                whitener: None,
                side: config.resample_side,
                mean_units: false,
            },
        })
    }
}

struct Prepared<'a> {
    model: &'a Model,
    scaled: Option<McrbmParams>,
    whitener: Option<&'a Whitener>,
    side: usize,
    mean_units: bool,
}

impl Prepared<'_> {
    fn descriptor(&self, patch: &Patch) -> Result<Descriptor> {
        match &self.model.body {
            ModelBody::Grbm { params, source, .. } => {
                grbm_descriptor(patch, params, self.side, *source)
            }
            ModelBody::Mcrbm { params, .. } => {
                let p = self.scaled.as_ref().unwrap_or(params);
                let w = self.whitener.expect("mcRBM models carry a whitener");
                let raw = Array1::from(resample_patch(patch, self.side)?);
                let white = w.apply(raw.view())?;
                if white.len() != p.n_visible() {
                    return Err(Error::arg(format!(
                        "whitener yields {} dims but the model expects {}",
                        white.len(),
                        p.n_visible()
                    )));
                }
                let mut values = p.cov_hidden_given_visible(white.view())?.to_vec();
                if self.mean_units {
                    values.extend(p.mean_hidden_given_visible(white.view())?);
                }
                Ok(Descriptor::new(values, Source::McrbmCov))
            }
        }
    }
}

fn count(x: f64, name: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
        Ok(x as usize)
    } else {
        Err(Error::Container(format!("{name}: {x} is not a count")))
    }
}
