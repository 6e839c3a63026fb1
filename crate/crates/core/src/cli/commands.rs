//! The commands behind each subcommand, callable from code and tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::image::{tile_filters, write_image};
use crate::config::{ModelKind, RunConfig};
use crate::container::Container;
use crate::dataset::{
    find_match_file, load_match_pairs, load_patch_archive, read_match_pairs, synthesize_corpus,
    write_patch_archive, LabeledPair, Patch, PatchSet, Scene,
};
use crate::descriptor::{fit_binarization_threshold, Source};
use crate::dump::{DescriptorDump, DumpHeader};
use crate::error::{Error, Result};
use crate::eval::{evaluate, DescriptorSet, EvalReport};
use crate::grbm::train_grbm;
use crate::mcrbm::train_mcrbm;
use crate::metrics::{DistanceKind, Metric};
use crate::model::{Model, ModelBody};
use crate::rng;

/// Environment variable that supplies the data root when `--data` is absent.
pub const DATA_ENV: &str = "PATCHRBM_DATA";

const POOL_TAG: u64 = 20;

/// Finds a scene directory under `root`, trying the public distribution's
/// alternative names.
pub fn scene_dir(root: &Path, name: &str) -> Result<PathBuf> {
    let direct = root.join(name);
    if direct.is_dir() {
        return Ok(direct);
    }
    if let Ok(scene) = name.parse::<Scene>() {
        for alias in scene.dir_aliases() {
            let p = root.join(alias);
            if p.is_dir() {
                return Ok(p);
            }
        }
    }
    Err(Error::io(
        direct,
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("scene {name:?} not found"),
        ),
    ))
}

fn dir_label(dir: &Path) -> String {
    dir.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("scene")
        .to_string()
}

/// Loads a scene directory, taking the scene label from its name.
pub fn load_scene(dir: &Path) -> Result<PatchSet> {
    let label = dir_label(dir);
    let scene = label.parse::<Scene>().unwrap_or_else(|_| {
        log::warn!("directory {label:?} is not a known scene name; labelling it SYNTH");
        Scene::Synth
    });
    load_patch_archive(dir, scene)
}

/// Union of the named scenes, each capped to `cap` randomly chosen patches.
pub fn training_pool(
    root: &Path,
    scenes: &[String],
    cap: Option<usize>,
    seed: u64,
) -> Result<PatchSet> {
    let mut sets = Vec::with_capacity(scenes.len());
    for (i, name) in scenes.iter().enumerate() {
        let set = load_scene(&scene_dir(root, name)?)?;
        let set = match cap {
            Some(cap) if cap < set.len() => {
                let mut r = rng::stream(seed, &[POOL_TAG, i as u64]);
                let mut idx = index::sample(&mut r, set.len(), cap).into_vec();
                idx.sort_unstable();
                let patches = idx.iter().map(|&j| set.patches()[j].clone()).collect();
                PatchSet::new(set.scene, patches)?
            }
            _ => set,
        };
        log::info!("scene {name}: {} training patches", set.len());
        sets.push(set);
    }
    PatchSet::union(sets)
}

/// Trains the configured model on `pool`. Returns the model and one JSON
/// object per epoch.
pub fn train_model(cfg: &RunConfig, pool: &PatchSet) -> Result<(Model, Vec<serde_json::Value>)> {
    let seed = cfg.seed();
    let kind = cfg.kind.code();
    fn rows<T: Serialize>(seed: u64, kind: &str, diags: &[T]) -> Vec<serde_json::Value> {
        diags
            .iter()
            .map(|d| {
                let mut v = serde_json::to_value(d).expect("diagnostics serialize");
                v["seed"] = seed.into();
                v["kind"] = kind.into();
                v
            })
            .collect()
    }
    let (body, log) = match cfg.kind {
        ModelKind::Grbm | ModelKind::SpGrbm => {
            let t = train_grbm(pool, &cfg.grbm)?;
            let source = if cfg.kind == ModelKind::Grbm {
                Source::Grbm
            } else {
                Source::SpGrbm
            };
            let log = rows(seed, kind, &t.diagnostics);
            (
                ModelBody::Grbm {
                    params: t.params,
                    source,
                    config: cfg.grbm.clone(),
                },
                log,
            )
        }
        ModelKind::Mcrbm => {
            let t = train_mcrbm(pool, &cfg.arch, &cfg.mcrbm)?;
            let log = rows(seed, kind, &t.diagnostics);
            let whitener = t
                .whitener
                .ok_or_else(|| Error::arg("mcRBM training returned no whitener"))?;
            (
                ModelBody::Mcrbm {
                    params: t.params,
                    arch: cfg.arch,
                    whitener,
                    config: cfg.mcrbm.clone(),
                    mean_units: cfg.mean_units,
                },
                log,
            )
        }
    };
    let model = Model {
        body,
        threshold: None,
        train_scenes: cfg.scenes.clone(),
        max_patches: cfg.max_patches,
    };
    Ok((model, log))
}

fn write_jsonl(path: &Path, rows: &[serde_json::Value]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Default location of the per-epoch log next to a model file.
pub fn log_path_for(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

pub fn cmd_synth(out: &Path, seed: u64, points: usize, views: usize) -> Result<PathBuf> {
    let (set, pairs) = synthesize_corpus(seed, points, views)?;
    let path = write_patch_archive(out, &set, Some(&pairs))?;
    Ok(path.expect("pairs were given"))
}

pub fn cmd_train(
    cfg: &RunConfig,
    data_root: &Path,
    out: &Path,
    log: Option<&Path>,
) -> Result<Model> {
    let pool = training_pool(data_root, &cfg.scenes, cfg.max_patches, cfg.seed())?;
    let (model, rows) = train_model(cfg, &pool)?;
    model.to_container().save(out)?;
    write_jsonl(
        &log.map_or_else(|| log_path_for(out), Path::to_path_buf),
        &rows,
    )?;
    Ok(model)
}

/// Fits the median threshold on the model's training pool and stores it.
pub fn binarize_model(model: &mut Model, pool: &PatchSet) -> Result<f64> {
    let patches: Vec<&Patch> = pool.patches().iter().collect();
    let descs = model.descriptors(&patches, 1.0)?;
    let t = fit_binarization_threshold(descs.iter().flat_map(|d| d.values.iter().copied()))?;
    model.threshold = Some(t);
    Ok(t)
}

pub fn cmd_binarize(model_path: &Path, data_root: &Path, out: &Path) -> Result<f64> {
    let mut model = Model::from_container(&Container::load(model_path)?)?;
    if model.train_scenes.is_empty() {
        return Err(Error::arg("model records no training scenes"));
    }
    let pool = training_pool(
        data_root,
        &model.train_scenes,
        model.max_patches,
        model.seed(),
    )?;
    let t = binarize_model(&mut model, &pool)?;
    model.to_container().save(out)?;
    Ok(t)
}

/// Which descriptors a model should produce for a given metric.
fn effective_p_scale(model: &Model, metric: Option<Metric>, p_scale: f64) -> f64 {
    match (&model.body, metric) {
        (ModelBody::Mcrbm { .. }, Some(Metric::Jsd)) => p_scale,
        _ => 1.0,
    }
}

fn provenance(model_fp: &str, p_scale: f64, threshold: Option<f64>) -> String {
    match threshold {
        Some(t) => format!("{model_fp}|p_scale={p_scale}|threshold={t}"),
        None => format!("{model_fp}|p_scale={p_scale}"),
    }
}

/// Descriptors from `model` for the given patch ids.
pub fn model_descriptors(
    model: &Model,
    set: &PatchSet,
    ids: &[usize],
    binary: bool,
    p_scale: f64,
) -> Result<DescriptorSet> {
    let patches = ids
        .iter()
        .map(|&id| {
            set.get(id)
                .ok_or_else(|| Error::arg(format!("no patch {id} in the scene")))
        })
        .collect::<Result<Vec<&Patch>>>()?;
    Ok(if binary {
        DescriptorSet::Binary(
            ids.iter()
                .copied()
                .zip(model.binary_descriptors(&patches)?)
                .collect(),
        )
    } else {
        DescriptorSet::Real(
            ids.iter()
                .copied()
                .zip(model.descriptors(&patches, p_scale)?)
                .collect(),
        )
    })
}

fn pair_ids(pairs: &[LabeledPair]) -> Vec<usize> {
    pairs
        .iter()
        .flat_map(|p| [p.a, p.b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub struct ExtractOptions<'a> {
    pub pairs: Option<&'a Path>,
    /// Metric the dump is meant for; `jsd` applies the P scaling.
    pub metric: Option<Metric>,
    pub binary: bool,
    pub p_scale: f64,
}

pub fn cmd_extract(
    model_path: &Path,
    scene: &Path,
    opts: &ExtractOptions<'_>,
    out: &Path,
) -> Result<DescriptorDump> {
    let container = Container::load(model_path)?;
    let model = Model::from_container(&container)?;
    let set = load_scene(scene)?;
    let ids: Vec<usize> = match opts.pairs {
        Some(p) => pair_ids(&load_match_pairs(p, &set)?),
        None => (0..set.len()).collect(),
    };
    let ps = effective_p_scale(&model, opts.metric, opts.p_scale);
    if opts.binary && ps != 1.0 {
        return Err(Error::arg(
            "binary descriptors are compared with hamming, not jsd",
        ));
    }
    let descriptors = model_descriptors(&model, &set, &ids, opts.binary, ps)?;
    let dump = DescriptorDump {
        header: DumpHeader {
            binary: opts.binary,
            source: model.source(),
            width: model.width(),
            threshold: if opts.binary { model.threshold } else { None },
            p_scale: ps,
            model: Some(container.fingerprint()),
            train: Some(model.train_scenes.join("+")),
            ..DumpHeader::external(model.width())
        },
        descriptors,
    };
    fs::write(out, dump.to_text()).map_err(|e| Error::io(out, e))?;
    Ok(dump)
}

pub enum EvalInput<'a> {
    Model(&'a Path),
    Dump(&'a Path),
}

pub struct EvaluateOptions<'a> {
    /// Scene directory holding the patches (needed for models).
    pub scene: Option<&'a Path>,
    /// Match file; defaults to the scene's `m50_*.txt`.
    pub pairs: Option<&'a Path>,
    pub kind: DistanceKind,
    pub p_scale: f64,
    /// Where the flat grid row is appended; none to skip.
    pub grid_file: Option<&'a Path>,
}

pub fn cmd_evaluate(
    input: EvalInput<'_>,
    opts: &EvaluateOptions<'_>,
    out: &Path,
) -> Result<EvalReport> {
    let pairs_path = match (opts.pairs, opts.scene) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(s)) => find_match_file(s)?,
        (None, None) => return Err(Error::arg("need a pairs file or a scene directory")),
    };
    let scene_label = match opts.scene {
        Some(s) => dir_label(s),
        None => pairs_path
            .parent()
            .map_or_else(|| "scene".to_string(), dir_label),
    };
    let hamming = opts.kind.metric == Metric::Hamming;
    let (report, method, train) = match input {
        EvalInput::Model(path) => {
            let container = Container::load(path)?;
            let model = Model::from_container(&container)?;
            let scene = opts
                .scene
                .ok_or_else(|| Error::arg("evaluating a model needs the scene directory"))?;
            let set = load_scene(scene)?;
            let pairs = load_match_pairs(&pairs_path, &set)?;
            if hamming && model.threshold.is_none() {
                return Err(Error::arg(
                    "hamming needs a binarized model; run `patchrbm binarize --model <model>` first",
                ));
            }
            let ps = effective_p_scale(&model, Some(opts.kind.metric), opts.p_scale);
            let descs = model_descriptors(&model, &set, &pair_ids(&pairs), hamming, ps)?;
            let prov = provenance(
                &container.fingerprint(),
                ps,
                model.threshold.filter(|_| hamming),
            );
            let report = evaluate(&descs, &pairs, opts.kind, &scene_label, &prov)?;
            (
                report,
                model.kind_code().to_string(),
                model.train_scenes.join("+"),
            )
        }
        EvalInput::Dump(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let dump =
                DescriptorDump::parse(&text).map_err(|(l, m)| Error::format(path, Some(l), m))?;
            if hamming && !dump.header.binary {
                return Err(Error::arg(
                    "hamming needs binary descriptors; run `patchrbm binarize` and `patchrbm extract --binary`",
                ));
            }
            let pairs = match opts.scene {
                Some(s) => load_match_pairs(&pairs_path, &load_scene(s)?)?,
                None => read_match_pairs(&pairs_path)?,
            };
            let fp = dump
                .header
                .model
                .clone()
                .unwrap_or_else(|| hex::encode(Sha256::digest(text.as_bytes())));
            let prov = provenance(
                &fp,
                dump.header.p_scale,
                dump.header.threshold.filter(|_| dump.header.binary),
            );
            let report = evaluate(&dump.descriptors, &pairs, opts.kind, &scene_label, &prov)?;
            let train = dump.header.train.clone().unwrap_or_else(|| "-".to_string());
            (report, dump.header.source.code().to_string(), train)
        }
    };
    fs::write(out, report.to_text()).map_err(|e| Error::io(out, e))?;
    if let Some(g) = opts.grid_file {
        let row = report.grid_row(&format!("{method}({})", opts.kind.label()), &train);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(g)
            .map_err(|e| Error::io(g, e))?;
        writeln!(f, "{row}").map_err(|e| Error::io(g, e))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportSummary {
    pub tiles: usize,
    pub width: usize,
    pub height: usize,
    /// Companion image of the GRBM's per-pixel standard deviations.
    pub precision_image: Option<PathBuf>,
}

/// Path of the GRBM standard-deviation tile written next to `out`.
pub fn precision_image_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("filters");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("png");
    out.with_file_name(format!("{stem}_precision.{ext}"))
}

pub fn cmd_export_filters(model_path: &Path, out: &Path) -> Result<ExportSummary> {
    let model = Model::from_container(&Container::load(model_path)?)?;
    let side = model.resample_side();
    let (filters, precision) = match &model.body {
        ModelBody::Grbm { params, .. } => {
            let f: Vec<Vec<f64>> = params.w.columns().into_iter().map(|c| c.to_vec()).collect();
            let sd: Vec<f64> = params.z.iter().map(|z| (-0.5 * z).exp()).collect();
            (f, Some(sd))
        }
        ModelBody::Mcrbm {
            params, whitener, ..
        } => {
            let pixel = whitener.inv_basis.t().dot(&params.c);
            (
                pixel.columns().into_iter().map(|c| c.to_vec()).collect(),
                None,
            )
        }
    };
    let img = tile_filters(&filters, side)?;
    write_image(out, &img)?;
    let precision_image = match precision {
        Some(sd) => {
            let p = precision_image_path(out);
            write_image(&p, &tile_filters(&[sd], side)?)?;
            Some(p)
        }
        None => None,
    };
    Ok(ExportSummary {
        tiles: filters.len(),
        width: img.width,
        height: img.height,
        precision_image,
    })
}

/// One cell of the grid: a train pool, test scene and distance kind.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub train: String,
    pub test: String,
    pub kind: DistanceKind,
    /// One rate per seed.
    pub rates: Vec<f64>,
}

impl GridCell {
    pub fn mean(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / self.rates.len() as f64).sqrt()
    }
}

/// Trains on every pool in `grid_train`, evaluates on every scene in
/// `grid_test` under every metric, for every seed.
pub fn run_grid(cfg: &RunConfig, data_root: &Path) -> Result<Vec<GridCell>> {
    let needs_threshold = cfg.grid_metrics.iter().any(|k| k.metric == Metric::Hamming);
    let mut tests = Vec::with_capacity(cfg.grid_test.len());
    for name in &cfg.grid_test {
        let dir = scene_dir(data_root, name)?;
        let set = load_scene(&dir)?;
        let pairs = load_match_pairs(&find_match_file(&dir)?, &set)?;
        tests.push((name.clone(), set, pairs));
    }
    let mut cells: BTreeMap<(usize, usize, usize), GridCell> = BTreeMap::new();
    for &seed in &cfg.grid_seeds {
        for (ti, train) in cfg.grid_train.iter().enumerate() {
            let mut run = cfg.clone();
            run.set_seed(seed);
            run.scenes = train.clone();
            let pool = training_pool(data_root, train, run.max_patches, seed)?;
            let (mut model, _) = train_model(&run, &pool)?;
            if needs_threshold {
                binarize_model(&mut model, &pool)?;
            }
            let fp = model.to_container().fingerprint();
            for (si, (test, set, pairs)) in tests.iter().enumerate() {
                let ids = pair_ids(pairs);
                for (mi, &kind) in cfg.grid_metrics.iter().enumerate() {
                    let hamming = kind.metric == Metric::Hamming;
                    let ps = effective_p_scale(&model, Some(kind.metric), cfg.jsd_p_scale);
                    let descs = model_descriptors(&model, set, &ids, hamming, ps)?;
                    let prov = provenance(&fp, ps, model.threshold.filter(|_| hamming));
                    let r = evaluate(&descs, pairs, kind, test, &prov)?;
                    log::info!(
                        "seed {seed} train {} test {test} {}: {:.2}%",
                        train.join("+"),
                        kind.label(),
                        r.error_rate_95
                    );
                    cells
                        .entry((mi, ti, si))
                        .or_insert_with(|| GridCell {
                            train: train.join("+"),
                            test: test.clone(),
                            kind,
                            rates: Vec::new(),
                        })
                        .rates
                        .push(r.error_rate_95);
                }
            }
        }
    }
    Ok(cells.into_values().collect())
}

/// Table with one block per metric, training pools as rows and test scenes
/// as columns.
pub fn format_grid(method: &str, cfg: &RunConfig, cells: &[GridCell]) -> String {
    let seeds: Vec<String> = cfg.grid_seeds.iter().map(u64::to_string).collect();
    let mut s = format!(
        "# method={method} seeds={} (95% error rate, %)\n",
        seeds.join(",")
    );
    let multi = cfg.grid_seeds.len() > 1;
    for kind in &cfg.grid_metrics {
        let _ = write!(s, "\n{:<14}", format!("[{}]", kind.label()));
        for t in &cfg.grid_test {
            let _ = write!(s, " {t:>14}");
        }
        s.push('\n');
        for train in &cfg.grid_train {
            let train = train.join("+");
            let _ = write!(s, "{train:<14}");
            for t in &cfg.grid_test {
                let cell = cells
                    .iter()
                    .find(|c| c.kind == *kind && c.train == train && &c.test == t);
                let txt = match cell {
                    Some(c) if multi => format!("{:.2}±{:.2}", c.mean(), c.std()),
                    Some(c) => format!("{:.2}", c.mean()),
                    None => "-".to_string(),
                };
                let _ = write!(s, " {txt:>14}");
            }
            s.push('\n');
        }
    }
    s
}

/// Runs the grid, writes the table to `out` and flat rows to `out.tsv`.
pub fn cmd_grid(cfg: &RunConfig, data_root: &Path, out: &Path) -> Result<Vec<GridCell>> {
    let cells = run_grid(cfg, data_root)?;
    let method = cfg.kind.code();
    fs::write(out, format_grid(method, cfg, &cells)).map_err(|e| Error::io(out, e))?;
    let mut rows = String::new();
    for c in &cells {
        let _ = writeln!(
            rows,
            "{method}({})\t{}\t{}\t{:.2}",
            c.kind.label(),
            c.train,
            c.test,
            c.mean()
        );
    }
    let tsv = out.with_extension("tsv");
    fs::write(&tsv, rows).map_err(|e| Error::io(&tsv, e))?;
    Ok(cells)
}
