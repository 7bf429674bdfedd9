//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use cloudseg::losscore::{LossConfig, LossKind};
use cloudseg::metrics::{aggregate, confusion, confusion_slices};
use cloudseg::raster::{extract_patches, Mask, PatchMode};
use cloudseg::sdaa::{default_param_grid, measured_shift, parse_mtl, project_shadows, rect_mask, SdaaParams, SolarGeometry};
use cloudseg::seed;
use cloudseg_cli::checks::{
    ce_normalization_ratio, filter_switch_deviation, loss_gradient_error, model_gradient_error, overpenalization_values, Faults,
};
use cloudseg_cli::commands::{cmd_augment, cmd_synth, cmd_train};
use cloudseg_cli::config::RunConfig;
use cloudseg_cli::experiment::{run_loss_effect, LossEffectConfig};

type Outcome = cloudseg::Result<(bool, String)>;
type Files = BTreeMap<String, Vec<u8>>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn overpenalization() -> Outcome {
    let [jl, jh, fl, fh] = overpenalization_values(&LossConfig::default())?;
    let ok = (jl - 1.0).abs() < 1e-5 && (jh - 1.0).abs() < 1e-5 && (fl - 0.01).abs() < 1e-3 && (fh - 0.99).abs() < 1e-3;
    Ok((ok, format!("jaccard {jl:.6} vs {jh:.6}; fjl1 {fl:.6} vs {fh:.6}")))
}

fn filter_switch() -> Outcome {
    let dev = filter_switch_deviation(&LossConfig::default(), 1000, 7)?;
    Ok((dev < 1e-12, format!("max |FJL - reference| = {dev:.3e} over 1000 pairs")))
}

fn gradients() -> Outcome {
    let cfg = LossConfig::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in LossKind::ALL {
        let e = loss_gradient_error(kind, &cfg, 100, 1e-5, 11, Faults::default())?;
        ok &= e < 1e-4;
        parts.push(format!("{kind} {e:.1e}"));
    }
    let m = model_gradient_error(100, 16, 1e-3, 11)?;
    let total = m.compared + m.skipped;
    ok &= m.worst < 1e-3 && m.compared * 2 >= total;
    parts.push(format!("network {:.1e} over {}/{total} parameters off kinks", m.worst, m.compared));
    Ok((ok, parts.join(", ")))
}

fn geometry() -> Outcome {
    let (h, w) = (256, 256);
    let cloud = rect_mask(h, w, 127..130, 127..130);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (az, zen) in [(127.68, 30.0), (0.0, 45.0), (301.5, 62.0)] {
        let g = SolarGeometry::new(az, zen)?;
        for p in default_param_grid() {
            let ssm = project_shadows(&cloud, &g, &p)?;
            let len = p.shift_r_px * zen.to_radians().sin();
            let a = (az + p.azimuth_offset_deg).to_radians();
            let (ey, ex) = (len * a.cos(), len * a.sin());
            match measured_shift(&cloud, &ssm) {
                Some((my, mx)) => {
                    worst = worst.max((my as f64 - ey).abs()).max((mx as f64 - ex).abs());
                    ok &= (my as f64 - ey).abs() <= 1.0 && (mx as f64 - ex).abs() <= 1.0;
                }
                None => ok = false,
            }
        }
    }
    let zero = project_shadows(&cloud, &SolarGeometry::new(127.68, 30.0)?, &SdaaParams::new(90.0, 0.0, 0.9)?)?;
    ok &= zero.is_all_false();
    Ok((ok, format!("3 sun positions x 120 triples, worst axis error {worst:.3} px; r = 0 gives {} SSM pixels", zero.count_ones())))
}

fn ce_normalization() -> Outcome {
    let cfg = LossConfig::default();
    let r = ce_normalization_ratio(&cfg)?;
    Ok(((r - 1.0).abs() < 1e-4 && (cfg.max_ce - 16.1180).abs() < 1e-4, format!("ratio {r:.6}, max_ce {:.4}", cfg.max_ce)))
}

fn tiling() -> Outcome {
    let n = extract_patches(1000, 1000, 384, PatchMode::NonOverlap)?.len();
    Ok((n == 9, format!("{n} patches")))
}

fn loss_effect() -> Outcome {
    let r = run_loss_effect(&LossEffectConfig::default(), LossKind::Fjl1, LossKind::Jaccard)?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Ok((
        r.median_candidate >= r.median_baseline + 0.02,
        format!(
            "median fjl1 {:.4} vs jaccard {:.4} (fjl1 [{}], jaccard [{}])",
            r.median_candidate,
            r.median_baseline,
            fmt(&r.candidate),
            fmt(&r.baseline)
        ),
    ))
}

fn metric_oracle() -> Outcome {
    let mut rng = seed::rng(seed::derive(3, "metric-oracle"));
    let (mut all_gt, mut all_pred) = (Vec::new(), Vec::new());
    let mut confusions = Vec::new();
    for _ in 0..20 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let p_gt = rng.random_range(0.0..1.0);
        let p_pred = rng.random_range(0.0..1.0);
        let gt: Vec<bool> = (0..h * w).map(|_| rng.random_bool(p_gt)).collect();
        let pred: Vec<bool> = (0..h * w).map(|_| rng.random_bool(p_pred)).collect();
        confusions.push(confusion(&Mask::new(h, w, 1, gt.clone())?, &Mask::new(h, w, 1, pred.clone())?)?);
        all_gt.extend(gt);
        all_pred.extend(pred);
    }
    let report = aggregate(&confusions)?;
    let count = |g: bool, p: bool| all_gt.iter().zip(&all_pred).filter(|&(&a, &b)| a == g && b == p).count() as f64;
    let (tp, tn, fp, fn_) = (count(true, true), count(false, false), count(false, true), count(true, false));
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let brute = [div(tp, tp + fp + fn_), div(tp, tp + fp), div(tp, tp + fn_), div(tp + tn, all_gt.len() as f64)];
    let pooled = [report.jaccard, report.precision, report.recall, report.accuracy];
    let sliced = confusion_slices(&all_gt, &all_pred);
    let ok = pooled == brute && sliced.tp as f64 == tp && sliced.fn_ as f64 == fn_;
    Ok((ok, format!("pooled {pooled:?} vs brute force {brute:?}")))
}

fn files(root: &Path) -> Files {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).expect("readable").map(|e| e.expect("entry")) {
            let p = entry.path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).expect("below root").display().to_string(), fs::read(&p).expect("file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir()?;
    let mut cfg = RunConfig { seed: 42, ..RunConfig::default() };
    cfg.synth.scenes = 6;
    cfg.synth.size = 32;
    cfg.model.contracting_blocks = 2;
    cfg.model.base_width = 4;
    cfg.train.epochs = 3;
    cfg.sdaa.params = Some(vec![SdaaParams::new(90.0, 20.0, 0.9)?, SdaaParams::new(270.0, 40.0, 0.8)?]);
    cfg.out = tmp.path().join("scenes");
    cmd_synth(&cfg)?;
    let scenes = cfg.out.clone();

    let mut run = |sub: &str| -> cloudseg::Result<(Vec<u8>, Files)> {
        cfg.out = tmp.path().join(sub).join("train");
        let summary = cmd_train(&cfg, Some(&scenes))?;
        cfg.out = tmp.path().join(sub).join("augment");
        cmd_augment(&cfg, Some(&scenes))?;
        Ok((fs::read(summary.checkpoint)?, files(&cfg.out)))
    };
    let (ckpt_a, aug_a) = run("a")?;
    let (ckpt_b, aug_b) = run("b")?;
    let ok = ckpt_a == ckpt_b && aug_a == aug_b && !aug_a.is_empty();
    Ok((
        ok,
        format!(
            "checkpoint {} bytes identical: {}; {} augmented files identical: {}",
            ckpt_a.len(),
            ckpt_a == ckpt_b,
            aug_a.len(),
            aug_a == aug_b
        ),
    ))
}

fn mtl() -> Outcome {
    let flat = parse_mtl("SUN_AZIMUTH = 152.71948465\nSUN_ELEVATION = 41.26503011\n")?;
    let nested = parse_mtl(
        "GROUP = L1_METADATA_FILE\n  GROUP = PRODUCT_METADATA\n    SPACECRAFT_ID = \"LANDSAT_8\"\n  END_GROUP = PRODUCT_METADATA\n  \
         GROUP = IMAGE_ATTRIBUTES\n    SUN_AZIMUTH = 127.68\n    SUN_ELEVATION = 60.00\n  END_GROUP = IMAGE_ATTRIBUTES\nEND_GROUP = L1_METADATA_FILE\nEND\n",
    )?;
    let ok = flat.azimuth_deg == 152.71948465
        && flat.zenith_deg == 90.0 - 41.26503011
        && nested.azimuth_deg == 127.68
        && nested.zenith_deg == 30.0;
    Ok((ok, format!("flat ({}, {}), nested ({}, {})", flat.azimuth_deg, flat.zenith_deg, nested.azimuth_deg, nested.zenith_deg)))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("empty-target over-penalization", overpenalization, Duration::from_secs(1)),
        ("filter switch", filter_switch, Duration::from_secs(1)),
        ("gradient correctness", gradients, Duration::from_secs(60)),
        ("shadow projection geometry", geometry, Duration::from_secs(10)),
        ("cross-entropy normalization", ce_normalization, Duration::from_secs(1)),
        ("edge-anchored tiling count", tiling, Duration::from_secs(1)),
        ("loss effect on synthetic scenes", loss_effect, Duration::from_secs(15 * 60)),
        ("pooled metric oracle", metric_oracle, Duration::from_secs(1)),
        ("determinism of train and augment", determinism, Duration::from_secs(15 * 60)),
        ("MTL parsing", mtl, Duration::from_secs(1)),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && took <= *budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!ok);
        println!(
            "criterion {:>2} [{}] {name}: {detail} ({:.2} s, budget {} s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
