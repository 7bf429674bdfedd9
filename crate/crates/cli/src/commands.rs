//! The subcommands as library functions; `main` only parses flags and
//! prints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use cloudseg::metrics::{aggregate, confusion, make_folds, multiclass_report, Confusion, ConfusionMatrix, MetricReport};
use cloudseg::microfcn::checkpoint;
use cloudseg::microfcn::{history_csv, predict_scene, train_with, Head, Model, ModelConfig, Sample, TrainConfig, TrainOutcome};
use cloudseg::raster::io::{read_mask_png, write_augmented, write_mask_png, write_probability_map, write_scene};
use cloudseg::raster::{extract_patches, is_empty_patch, Mask, DEFAULT_EMPTY_THRESHOLD};
use cloudseg::sdaa::{augment, Scene, SdaaParams};
use cloudseg::{seed, Error, Result};

use crate::checks::{full_suite, CheckReport, Faults};
use crate::config::RunConfig;
use crate::data::{load_scenes, synth_dataset, Task};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn required<'a>(flag: Option<&'a Path>, fallback: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    flag.or(fallback.as_deref()).ok_or_else(|| Error::InvalidConfig(format!("no {what} given (flag or [data] entry)")))
}

/// Write `synth.scenes` synthetic scenes below `out`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.out)?;
    let mut dirs = Vec::new();
    for scene in synth_dataset(&cfg.synth, cfg.seed)? {
        let dir = cfg.out.join(&scene.scene_id);
        write_scene(&dir, &scene)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub written: Vec<PathBuf>,
    /// Scenes without shadow or without cloud.
    pub skipped: Vec<String>,
}

/// Shadow-augment every scene below `input` with every configured triple.
pub fn cmd_augment(cfg: &RunConfig, input: Option<&Path>) -> Result<AugmentSummary> {
    let input = required(input, &cfg.data.scenes, "scene directory")?;
    let grid = cfg.sdaa.grid();
    fs::create_dir_all(&cfg.out)?;
    let mut summary = AugmentSummary::default();
    for (name, scene) in load_scenes(input)? {
        if scene.shadow_mask.is_all_false() || scene.cloud_mask.is_all_false() {
            log::info!("skipping {name}: no shadow or no cloud to project");
            summary.skipped.push(name);
            continue;
        }
        for p in &grid {
            let sample = augment(&scene, p)?;
            summary.written.push(write_augmented(&cfg.out, &sample, scene.geometry)?);
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub scene: String,
    pub patches: usize,
    /// Patches left after dropping mostly empty ones.
    pub kept: usize,
}

fn crop_mask(m: &Mask, origin: (usize, usize), size: usize) -> Result<Mask> {
    m.crop(origin, size, size)
}

/// Cut every scene into `predict.patch_size` patches written as scene
/// directories, dropping patches that are mostly empty.
pub fn cmd_tile(cfg: &RunConfig, input: Option<&Path>) -> Result<Vec<TileRecord>> {
    let input = required(input, &cfg.data.scenes, "scene directory")?;
    let ps = cfg.predict.patch_size;
    fs::create_dir_all(&cfg.out)?;
    let mut records = Vec::new();
    for (name, scene) in load_scenes(input)? {
        let (h, w) = scene.raster.dims();
        let origins = extract_patches(h, w, ps, cfg.predict.overlap)?;
        let mut kept = 0;
        for &(r, c) in &origins {
            let raster = scene.raster.crop((r, c), ps, ps)?;
            if is_empty_patch(&raster, DEFAULT_EMPTY_THRESHOLD) {
                continue;
            }
            let id = format!("{}_r{r:05}_c{c:05}", scene.scene_id);
            let patch = Scene::new(
                id.clone(),
                raster,
                crop_mask(&scene.cloud_mask, (r, c), ps)?,
                crop_mask(&scene.shadow_mask, (r, c), ps)?,
                scene.geometry,
            )?;
            write_scene(&cfg.out.join(&id), &patch)?;
            kept += 1;
        }
        records.push(TileRecord { scene: name, patches: origins.len(), kept });
    }
    write_json(&cfg.out.join("tiles.json"), &records)?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

fn samples(scenes: &[&Scene], task: Task) -> Result<Vec<Sample>> {
    scenes.iter().map(|s| task.sample(s)).collect()
}

fn fit(cfg: &RunConfig, scenes: &[&Scene], task: Task, model: &ModelConfig, train_seed: u64) -> Result<TrainOutcome> {
    let tcfg = TrainConfig { seed: train_seed, ..cfg.train.clone() };
    let outcome = train_with(&samples(scenes, task)?, cfg.loss, &cfg.loss_config, &tcfg, model, |r| {
        log::info!("epoch {:>3}  train {:.5}  val {:.5}  lr {:.2e}", r.epoch, r.train_loss, r.val_loss, r.lr)
    })?;
    outcome.warnings.iter().for_each(|w| log::warn!("{w}"));
    Ok(outcome)
}

/// Train on every scene below `input`; writes `model.ckpt` and `history.csv`.
pub fn cmd_train(cfg: &RunConfig, input: Option<&Path>) -> Result<TrainSummary> {
    let input = required(input, &cfg.data.scenes, "scene directory")?;
    let scenes = load_scenes(input)?;
    let refs: Vec<&Scene> = scenes.iter().map(|(_, s)| s).collect();
    let outcome = fit(cfg, &refs, cfg.task, &cfg.model, cfg.train_config().seed)?;
    fs::create_dir_all(&cfg.out)?;
    let ckpt = cfg.out.join("model.ckpt");
    let hist = cfg.out.join("history.csv");
    checkpoint::save(&ckpt, &outcome.model, cfg.seed, outcome.best_epoch)?;
    fs::write(&hist, history_csv(&outcome.history)?)?;
    Ok(TrainSummary { checkpoint: ckpt, history: hist, best_epoch: outcome.best_epoch, warnings: outcome.warnings })
}

/// Predict every scene below `input`; writes `<scene>/probability.f32`,
/// its JSON sidecar and one mask PNG per class.
pub fn cmd_predict(cfg: &RunConfig, input: Option<&Path>, ckpt: Option<&Path>) -> Result<Vec<PathBuf>> {
    let input = required(input, &cfg.data.scenes, "scene directory")?;
    let ckpt = required(ckpt, &cfg.data.checkpoint, "checkpoint")?;
    let (model, _) = checkpoint::load(ckpt)?;
    cfg.task.check_model(model.config())?;
    let mut dirs = Vec::new();
    for (name, scene) in load_scenes(input)? {
        let pred = predict_scene(&model, &scene.raster, &cfg.predict)?;
        let dir = cfg.out.join(&name);
        fs::create_dir_all(&dir)?;
        write_probability_map(&dir.join("probability.f32"), &pred.map.map, &scene.scene_id)?;
        for (class, mask) in cfg.task.class_names().iter().zip(&pred.masks) {
            write_mask_png(&dir.join(format!("{class}.png")), mask)?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

fn class_labels(cloud: &Mask, shadow: &Mask) -> Vec<usize> {
    cloud
        .data()
        .iter()
        .zip(shadow.data())
        .map(|(&c, &s)| {
            if c {
                0
            } else if s {
                1
            } else {
                2
            }
        })
        .collect()
}

/// Accumulates per-scene results for binary or three-class tasks.
struct Scorer {
    task: Task,
    confusions: Vec<Confusion>,
    matrix: ConfusionMatrix,
    scenes: usize,
}

impl Scorer {
    fn new(task: Task) -> Self {
        Self { task, confusions: Vec::new(), matrix: ConfusionMatrix::new(3), scenes: 0 }
    }

    /// `gt` and `pred` hold the cloud and shadow masks in that order for
    /// three-class tasks and the single task mask otherwise.
    fn add(&mut self, id: &str, gt: &[Mask], pred: &[Mask]) -> Result<()> {
        self.scenes += 1;
        if self.task == Task::CloudShadow {
            self.matrix.add(&class_labels(&gt[0], &gt[1]), &class_labels(&pred[0], &pred[1]))
        } else {
            let mut c = confusion(&gt[0], &pred[0])?;
            c.scene_id = id.to_string();
            self.confusions.push(c);
            Ok(())
        }
    }

    fn report(&self) -> Result<MetricReport> {
        if self.task == Task::CloudShadow {
            multiclass_report(&self.matrix, self.task.class_names(), self.scenes)
        } else {
            aggregate(&self.confusions)
        }
    }
}

fn mask_names(task: Task) -> &'static [&'static str] {
    match task {
        Task::CloudShadow => &["cloud", "shadow"],
        _ => &task.class_names()[..1],
    }
}

/// Compare mask PNGs of `pred` against the scene directories of `gt`,
/// matching by directory name; writes `report.json`.
pub fn cmd_evaluate(cfg: &RunConfig, pred: Option<&Path>, gt: Option<&Path>) -> Result<MetricReport> {
    let pred = required(pred, &cfg.data.predictions, "prediction directory")?;
    let gt = required(gt, &cfg.data.ground_truth, "ground-truth directory")?;
    let names = mask_names(cfg.task);
    let mut scorer = Scorer::new(cfg.task);
    for (name, _) in load_scenes(gt)? {
        let read = |root: &Path| -> Result<Vec<Mask>> {
            names.iter().map(|m| read_mask_png(&root.join(&name).join(format!("{m}.png")))).collect()
        };
        let p = read(pred).map_err(|e| match e {
            Error::Io(io) => Error::InvalidInput(format!("prediction for scene {name} missing: {io}")),
            other => other,
        })?;
        scorer.add(&name, &read(gt)?, &p)?;
    }
    let report = scorer.report()?;
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    Ok(report)
}

/// Run the numerical self-checks.
pub fn cmd_losscheck(cfg: &RunConfig, faults: Faults) -> Result<CheckReport> {
    full_suite(&cfg.loss_config, cfg.seed, faults)
}

fn score(model: &Model, scenes: &[&Scene], task: Task, cfg: &RunConfig) -> Result<MetricReport> {
    let mut scorer = Scorer::new(task);
    for s in scenes {
        let masks = predict_scene(model, &s.raster, &cfg.predict)?.masks;
        let n = mask_names(task).len();
        scorer.add(&s.scene_id, &task.masks(s)[..n], &masks[..n])?;
    }
    scorer.report()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub params: SdaaParams,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    /// Shadow Jaccard of the model trained on original scenes only.
    pub baseline: Option<f64>,
    /// Triples that beat the baseline, best first.
    pub ranked: Vec<GridEntry>,
    pub evaluated: Vec<GridEntry>,
}

/// Rank augmentation triples by the held-out shadow Jaccard of a network
/// trained on the original plus augmented scenes; writes `gridsearch.json`.
pub fn cmd_gridsearch(cfg: &RunConfig, input: Option<&Path>) -> Result<GridSearchReport> {
    let grid = cfg.sdaa.grid();
    let mut report = GridSearchReport { baseline: None, ranked: Vec::new(), evaluated: Vec::new() };
    if grid.is_empty() {
        return Ok(report);
    }
    let input = required(input, &cfg.data.scenes, "scene directory")?;
    let scenes = load_scenes(input)?;
    if scenes.len() < 2 {
        return Err(Error::InvalidInput("grid search needs at least two scenes".into()));
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(cfg.seed, "gridsearch")));
    let n_hold = ((scenes.len() as f64 * cfg.sdaa.holdout_fraction).round() as usize).clamp(1, scenes.len() - 1);
    let holdout: Vec<&Scene> = order[..n_hold].iter().map(|&i| &scenes[i].1).collect();
    let originals: Vec<&Scene> = order[n_hold..].iter().map(|&i| &scenes[i].1).collect();
    let model_cfg = ModelConfig { classes: 1, head: Head::Sigmoid, ..cfg.model.clone() };
    let train_seed = seed::derive(cfg.seed, "train");

    let base = fit(cfg, &originals, Task::Shadow, &model_cfg, train_seed)?;
    let baseline = score(&base.model, &holdout, Task::Shadow, cfg)?.jaccard;
    log::info!("baseline shadow jaccard {baseline:.4}");
    report.baseline = Some(baseline);

    for p in &grid {
        let augmented: Vec<Scene> = originals
            .iter()
            .filter(|s| !s.shadow_mask.is_all_false() && !s.cloud_mask.is_all_false())
            .map(|s| Ok(augment(s, p)?.into_scene(s.geometry)))
            .collect::<Result<_>>()?;
        let mut set = originals.clone();
        set.extend(augmented.iter());
        let trained = fit(cfg, &set, Task::Shadow, &model_cfg, train_seed)?;
        let jaccard = score(&trained.model, &holdout, Task::Shadow, cfg)?.jaccard;
        log::info!("azimuth offset {} r {} gamma {}: shadow jaccard {jaccard:.4}", p.azimuth_offset_deg, p.shift_r_px, p.gamma);
        report.evaluated.push(GridEntry { params: *p, jaccard });
    }
    report.ranked = report.evaluated.iter().filter(|e| e.jaccard > baseline).cloned().collect();
    report.ranked.sort_by(|a, b| b.jaccard.total_cmp(&a.jaccard));
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("gridsearch.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub scenes: Vec<String>,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub folds: Vec<FoldReport>,
    /// Mean of the fold Jaccard indices.
    pub mean_jaccard: f64,
}

/// k-fold cross-validation over the scenes below `input`; writes
/// `crossval.json`.
pub fn cmd_crossval(cfg: &RunConfig, input: Option<&Path>) -> Result<CrossvalReport> {
    let input = required(input, &cfg.data.scenes, "scene directory")?;
    let scenes = load_scenes(input)?;
    let folds = make_folds(scenes.len(), cfg.crossval.folds, seed::derive(cfg.seed, "folds"))?;
    let mut reports = Vec::new();
    for (k, held) in folds.iter().enumerate() {
        let test: Vec<&Scene> = held.iter().map(|&i| &scenes[i].1).collect();
        let train: Vec<&Scene> = (0..scenes.len()).filter(|i| !held.contains(i)).map(|i| &scenes[i].1).collect();
        let trained = fit(cfg, &train, cfg.task, &cfg.model, seed::derive_indexed(cfg.seed, "fold", k as u64))?;
        let report = score(&trained.model, &test, cfg.task, cfg)?;
        log::info!("fold {k}: jaccard {:.4}", report.jaccard);
        reports.push(FoldReport { fold: k, scenes: held.iter().map(|&i| scenes[i].0.clone()).collect(), report });
    }
    let mean_jaccard = reports.iter().map(|r| r.report.jaccard).sum::<f64>() / reports.len() as f64;
    let out = CrossvalReport { folds: reports, mean_jaccard };
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("crossval.json"), &out)?;
    Ok(out)
}
