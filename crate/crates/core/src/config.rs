//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key may appear at most
//! once and unknown keys are rejected with the list of valid ones.

use std::collections::BTreeMap;

use crate::descriptor::Normalization;
use crate::error::{Error, Result};
use crate::grbm::{GrbmTrainConfig, Reconstruction};
use crate::mcrbm::{McrbmArch, McrbmTrainConfig};
use crate::metrics::{DistanceKind, Metric};

pub const VALID_KEYS: &[&str] = &[
    "kind",
    "arch",
    "scenes",
    "max_patches",
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "resample_side",
    "n_hidden",
    "rmsprop_decay",
    "sparsity_target",
    "sparsity_penalty",
    "sparsity_bias_only",
    "init_std",
    "reconstruction",
    "p_update_start",
    "freeze_p",
    "lr_p_scale",
    "hmc_leapfrog",
    "hmc_step_size",
    "hmc_target_acceptance",
    "hmc_adapt_rate",
    "c_init_std",
    "w_init_std",
    "p_init_std",
    "norm_decay",
    "whiten_retain",
    "eps_eig",
    "mean_units",
    "jsd_p_scale",
    "grid_train",
    "grid_test",
    "grid_metrics",
    "grid_seeds",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Grbm,
    SpGrbm,
    Mcrbm,
}

impl ModelKind {
    pub fn code(self) -> &'static str {
        match self {
            ModelKind::Grbm => "grbm",
            ModelKind::SpGrbm => "spgrbm",
            ModelKind::Mcrbm => "mcrbm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub arch_name: String,
    pub arch: McrbmArch,
    /// Scene directory names, all pooled for training.
    pub scenes: Vec<String>,
    /// Per-scene cap on training patches.
    pub max_patches: Option<usize>,
    pub grbm: GrbmTrainConfig,
    pub mcrbm: McrbmTrainConfig,
    pub mean_units: bool,
    pub jsd_p_scale: f64,
    /// Each entry is one training pool (scene names joined for training).
    pub grid_train: Vec<Vec<String>>,
    pub grid_test: Vec<String>,
    pub grid_metrics: Vec<DistanceKind>,
    pub grid_seeds: Vec<u64>,
}

/// Splits the text into a key/value map, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key = value, got {line:?}",
                i + 1
            ))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !VALID_KEYS.contains(&k) {
            return Err(Error::Config(format!(
                "line {}: unknown key {k:?}; valid keys are: {}",
                i + 1,
                VALID_KEYS.join(", ")
            )));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: key {k:?} given twice",
                i + 1
            )));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("{k}: cannot parse {v:?}: {e}")))
}

fn flag(k: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{k}: expected true or false, got {v:?}"
        ))),
    }
}

/// Scene list separated by `+` or `,`.
pub fn parse_scene_list(s: &str) -> Result<Vec<String>> {
    let v: Vec<String> = s
        .split(['+', ','])
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(str::to_string)
        .collect();
    if v.is_empty() {
        return Err(Error::Config("empty scene list".into()));
    }
    Ok(v)
}

/// `metric/normalization` (normalization defaults to none).
pub fn parse_distance_kind(s: &str) -> Result<DistanceKind> {
    let (m, n) = s.split_once(['/', ':']).unwrap_or((s, "none"));
    DistanceKind::new(
        m.trim().parse::<Metric>()?,
        n.trim().parse::<Normalization>()?,
    )
}

impl RunConfig {
    pub fn defaults(kind: ModelKind, arch_name: &str) -> Result<RunConfig> {
        let arch = McrbmArch::preset(arch_name)?;
        Ok(RunConfig {
            kind,
            arch_name: arch_name.to_string(),
            arch,
            scenes: vec!["SYNTH".into()],
            max_patches: None,
            grbm: match kind {
                ModelKind::SpGrbm => GrbmTrainConfig::sparse(),
                _ => GrbmTrainConfig::default(),
            },
            mcrbm: McrbmTrainConfig::for_arch(&arch),
            mean_units: false,
            jsd_p_scale: 3.0,
            grid_train: vec![
                vec!["LY".into()],
                vec!["ND".into()],
                vec!["HD".into()],
                vec!["LY".into(), "ND".into(), "HD".into()],
            ],
            grid_test: vec!["LY".into(), "ND".into(), "HD".into()],
            grid_metrics: vec![DistanceKind::new(Metric::L1, Normalization::L1)?],
            grid_seeds: vec![0],
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let kv = parse_pairs(text)?;
        let kind = match kv.get("kind").map(String::as_str) {
            None | Some("spgrbm") => ModelKind::SpGrbm,
            Some("grbm") => ModelKind::Grbm,
            Some("mcrbm") => ModelKind::Mcrbm,
            Some(k) => {
                return Err(Error::Config(format!(
                    "kind: expected grbm, spgrbm or mcrbm, got {k:?}"
                )))
            }
        };
        let mut c = RunConfig::defaults(kind, kv.get("arch").map_or("compact", String::as_str))?;
        for (k, v) in &kv {
            let v = v.as_str();
            match k.as_str() {
                "kind" | "arch" => {}
                "scenes" => c.scenes = parse_scene_list(v)?,
                "max_patches" => c.max_patches = Some(num(k, v)?),
                "seed" => c.set_seed(num(k, v)?),
                "epochs" => {
                    c.grbm.epochs = num(k, v)?;
                    c.mcrbm.epochs = c.grbm.epochs;
                }
                "batch_size" => {
                    c.grbm.batch_size = num(k, v)?;
                    c.mcrbm.batch_size = c.grbm.batch_size;
                }
                "lr" => {
                    c.grbm.lr = num(k, v)?;
                    c.mcrbm.lr = c.grbm.lr;
                }
                "resample_side" => {
                    c.grbm.resample_side = num(k, v)?;
                    c.mcrbm.resample_side = c.grbm.resample_side;
                }
                "n_hidden" => c.grbm.n_hidden = num(k, v)?,
                "rmsprop_decay" => c.grbm.rmsprop_decay = num(k, v)?,
                "sparsity_target" => c.grbm.sparsity_target = num(k, v)?,
                "sparsity_penalty" => c.grbm.sparsity_penalty = num(k, v)?,
                "sparsity_bias_only" => c.grbm.sparsity_bias_only = flag(k, v)?,
                "init_std" => c.grbm.init_std = num(k, v)?,
                "reconstruction" => {
                    c.grbm.reconstruction = match v {
                        "sampled" => Reconstruction::Sampled,
                        "mean" => Reconstruction::Mean,
                        _ => {
                            return Err(Error::Config(format!(
                                "reconstruction: expected sampled or mean, got {v:?}"
                            )))
                        }
                    }
                }
                "p_update_start" => c.mcrbm.p_update_start = num(k, v)?,
                "freeze_p" => c.mcrbm.freeze_p = flag(k, v)?,
                "lr_p_scale" => c.mcrbm.lr_p_scale = num(k, v)?,
                "hmc_leapfrog" => c.mcrbm.hmc.n_leapfrog = num(k, v)?,
                "hmc_step_size" => c.mcrbm.hmc.step_size = num(k, v)?,
                "hmc_target_acceptance" => c.mcrbm.hmc.target_acceptance = num(k, v)?,
                "hmc_adapt_rate" => c.mcrbm.hmc.adapt_rate = num(k, v)?,
                "c_init_std" => c.mcrbm.c_init_std = num(k, v)?,
                "w_init_std" => c.mcrbm.w_init_std = num(k, v)?,
                "p_init_std" => c.mcrbm.p_init_std = num(k, v)?,
                "norm_decay" => c.mcrbm.norm_decay = num(k, v)?,
                "whiten_retain" => c.mcrbm.whiten_retain = num(k, v)?,
                "eps_eig" => c.mcrbm.eps_eig = num(k, v)?,
                "mean_units" => c.mean_units = flag(k, v)?,
                "jsd_p_scale" => {
                    c.jsd_p_scale = num(k, v)?;
                    if !(c.jsd_p_scale > 0.0) {
                        return Err(Error::Config("jsd_p_scale must be positive".into()));
                    }
                }
                "grid_train" => {
                    c.grid_train = v
                        .split(',')
                        .map(|g| parse_scene_list(g))
                        .collect::<Result<_>>()?
                }
                "grid_test" => c.grid_test = parse_scene_list(v)?,
                "grid_metrics" => {
                    c.grid_metrics = v
                        .split(',')
                        .map(|m| parse_distance_kind(m.trim()))
                        .collect::<Result<_>>()?
                }
                "grid_seeds" => {
                    c.grid_seeds = v
                        .split(',')
                        .map(|s| num("grid_seeds", s.trim()))
                        .collect::<Result<_>>()?
                }
                _ => unreachable!("keys are checked against VALID_KEYS"),
            }
        }
        c.grbm.validate()?;
        c.mcrbm.validate()?;
        Ok(c)
    }

    pub fn seed(&self) -> u64 {
        self.grbm.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.grbm.seed = seed;
        self.mcrbm.seed = seed;
    }
}
