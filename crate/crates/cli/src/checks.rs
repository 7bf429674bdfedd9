//! Numerical self-checks of the losses and the network.

use std::fmt;

use rand::Rng;

use cloudseg::losscore::{
    cross_entropy, fjl, inverse_jaccard, loss, loss_gradient, soft_jaccard, CeVariant, FjlVariant, LossConfig, LossKind, Prediction, Target,
};
use cloudseg::microfcn::{Model, ModelConfig, Tensor};
use cloudseg::{seed, Result};

/// Relative difference with a floor on the denominator, so that values
/// that are both near zero compare by absolute error.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Deliberate defects, for checking that the suite can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Scale every analytic loss gradient by 1.01.
    pub wrong_gradient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn t(v: Vec<u8>) -> Target {
    Target::new(v).expect("binary labels")
}

fn y(v: Vec<f64>) -> Prediction {
    Prediction::new(v).expect("values in [0, 1]")
}

/// Loss values of the four-pixel empty-target example.
pub fn overpenalization_values(cfg: &LossConfig) -> Result<[f64; 4]> {
    let empty = t(vec![0; 4]);
    let low = y(vec![0.01; 4]);
    let high = y(vec![0.99; 4]);
    Ok([
        soft_jaccard(&empty, &low, cfg)?,
        soft_jaccard(&empty, &high, cfg)?,
        fjl(&empty, &low, FjlVariant::Fjl1, cfg)?,
        fjl(&empty, &high, FjlVariant::Fjl1, cfg)?,
    ])
}

fn check_overpenalization(cfg: &LossConfig) -> Result<Check> {
    let [jl, jh, fl, fh] = overpenalization_values(cfg)?;
    let passed = (jl - 1.0).abs() < 1e-5 && (jh - 1.0).abs() < 1e-5 && (fl - 0.01).abs() < 1e-3 && (fh - 0.99).abs() < 1e-3;
    Ok(Check { name: "empty-target over-penalization", passed, detail: format!("jaccard {jl:.6} / {jh:.6}, fjl1 {fl:.6} / {fh:.6}") })
}

/// Largest filter-switch deviation over `n` random pairs:
/// `|FJL − G|` for empty targets and `|FJL − J|` otherwise, both variants.
pub fn filter_switch_deviation(cfg: &LossConfig, n: usize, root: u64) -> Result<f64> {
    let mut rng = seed::rng(seed::derive(root, "filter-switch"));
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (tt, yy) = random_pair(&mut rng);
        let j = soft_jaccard(&tt, &yy, cfg)?;
        for (variant, g) in
            [(FjlVariant::Fjl1, inverse_jaccard(&tt, &yy, cfg)?), (FjlVariant::Fjl2, cloudseg::losscore::normalized_ce(&tt, &yy, cfg)?)]
        {
            let f = fjl(&tt, &yy, variant, cfg)?;
            let reference = if tt.positives() == 0 { cfg.k_g * g } else { cfg.k_j * j };
            worst = worst.max((f - reference).abs());
        }
    }
    Ok(worst)
}

fn random_pair<R: Rng>(rng: &mut R) -> (Target, Prediction) {
    let n = rng.random_range(2..=40);
    let empty = rng.random_bool(0.3);
    let labels = (0..n).map(|_| u8::from(!empty && rng.random_bool(0.4))).collect();
    let values = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
    (t(labels), y(values))
}

/// Largest elementwise relative error between analytic and central
/// finite-difference gradients of `kind` over `n` random instances.
pub fn loss_gradient_error(kind: LossKind, cfg: &LossConfig, n: usize, step: f64, root: u64, faults: Faults) -> Result<f64> {
    let mut rng = seed::rng(seed::derive(root, kind.name()));
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (tt, yy) = random_pair(&mut rng);
        let mut analytic = loss_gradient(kind, &tt, &yy, cfg)?;
        if faults.wrong_gradient {
            analytic.iter_mut().for_each(|g| *g *= 1.01);
        }
        let base = yy.values().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let mut up = base.clone();
            let mut down = base.clone();
            up[i] += step;
            down[i] -= step;
            let numeric = (loss(kind, &tt, &y(up), cfg)? - loss(kind, &tt, &y(down), cfg)?) / (2.0 * step);
            worst = worst.max(rel_err(a, numeric, 1e-6));
        }
    }
    Ok(worst)
}

/// Outcome of [`model_gradient_error`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelGradientCheck {
    /// Largest relative error over the compared parameters.
    pub worst: f64,
    pub compared: usize,
    /// Parameters whose `±step` perturbation flipped a ReLU or a max-pool
    /// winner; the network is not differentiable between those points.
    pub skipped: usize,
}

/// Backpropagated against central finite-difference parameter gradients
/// of a two-block network on `size × size` inputs, over `instances` random
/// models, biases and inputs.
pub fn model_gradient_error(instances: usize, size: usize, step: f64, root: u64) -> Result<ModelGradientCheck> {
    let mut out = ModelGradientCheck { worst: 0.0, compared: 0, skipped: 0 };
    for k in 0..instances {
        let s = seed::derive_indexed(root, "model-gradient", k as u64);
        let cfg = ModelConfig { contracting_blocks: 2, base_width: 2, ..ModelConfig::default() };
        let mut model = Model::new(cfg, s)?;
        let mut rng = seed::rng(s);
        for conv in model.convs_mut() {
            conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let x = Tensor::new(4, size, size, (0..4 * size * size).map(|_| rng.random_range(0.0..1.0)).collect())?;
        let r: Vec<f64> = (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |c: &cloudseg::microfcn::Cache| -> f64 { c.output().data.iter().zip(&r).map(|(o, w)| o * w).sum() };
        let cache = model.forward_cached(&x)?;
        let upstream = Tensor::new(1, size, size, r.clone())?;
        let analytic = model.backward(&cache, &upstream)?.0.flatten();
        let params = model.params();
        for (i, &a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            p[i] = params[i] + step;
            model.set_params(&p)?;
            let up = model.forward_cached(&x)?;
            p[i] = params[i] - step;
            model.set_params(&p)?;
            let down = model.forward_cached(&x)?;
            if !(cache.same_pattern(&up) && cache.same_pattern(&down)) {
                out.skipped += 1;
                continue;
            }
            out.compared += 1;
            out.worst = out.worst.max(rel_err(a, (objective(&up) - objective(&down)) / (2.0 * step), 1e-4));
        }
        model.set_params(&params)?;
    }
    Ok(out)
}

/// `cross_entropy(1s, 0s) / max_ce`.
pub fn ce_normalization_ratio(cfg: &LossConfig) -> Result<f64> {
    let cfg = cfg.with_ce_variant(CeVariant::AsWritten);
    Ok(cross_entropy(&t(vec![1; 8]), &y(vec![0.0; 8]), &cfg)? / cfg.max_ce)
}

/// The loss part of `losscheck`.
pub fn loss_suite(cfg: &LossConfig, root: u64, faults: Faults) -> Result<CheckReport> {
    cfg.validate()?;
    let mut report = CheckReport::default();
    report.checks.push(check_overpenalization(cfg)?);

    let dev = filter_switch_deviation(cfg, 1000, root)?;
    report.checks.push(Check { name: "filter switch", passed: dev < 1e-12, detail: format!("max deviation {dev:.3e} over 1000 pairs") });

    for kind in LossKind::ALL {
        let err = loss_gradient_error(kind, cfg, 100, 1e-5, root, faults)?;
        report.checks.push(Check {
            name: match kind {
                LossKind::Jaccard => "jaccard gradient",
                LossKind::CrossEntropy => "ce gradient",
                LossKind::Fjl1 => "fjl1 gradient",
                LossKind::Fjl2 => "fjl2 gradient",
            },
            passed: err < 1e-4,
            detail: format!("max relative error {err:.3e} over 100 instances"),
        });
    }

    let ratio = ce_normalization_ratio(cfg)?;
    report.checks.push(Check {
        name: "ce normalization",
        passed: (ratio - 1.0).abs() < 1e-4 && (cfg.max_ce - 16.1180).abs() < 1e-4,
        detail: format!("ce(1, 0) / max_ce = {ratio:.6}, max_ce = {:.5}", cfg.max_ce),
    });

    if cfg.ce_variant == CeVariant::AsWritten {
        let g = loss_gradient(LossKind::Fjl2, &t(vec![0; 4]), &y(vec![0.3, 0.6, 0.9, 0.1]), cfg)?;
        if g.iter().all(|v| v.abs() < 1e-100) {
            report.warnings.push(
                "fjl2 with the as-written cross-entropy has zero gradient on empty targets; use --ce-variant symmetric to train on cloud-free scenes".into(),
            );
        }
    }
    Ok(report)
}

/// Loss suite plus the network gradient check.
pub fn full_suite(cfg: &LossConfig, root: u64, faults: Faults) -> Result<CheckReport> {
    let mut report = loss_suite(cfg, root, faults)?;
    let m = model_gradient_error(2, 16, 1e-3, root)?;
    let total = m.compared + m.skipped;
    report.checks.push(Check {
        name: "network gradient",
        passed: m.worst < 1e-3 && m.compared * 2 >= total,
        detail: format!(
            "max relative error {:.3e} over {} of {total} parameters, two-block model on 16x16 inputs ({} skipped at ReLU or max-pool kinks)",
            m.worst, m.compared, m.skipped
        ),
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes_and_warns() {
        let r = loss_suite(&LossConfig::default(), 0, Faults::default()).unwrap();
        assert!(r.all_passed(), "{:?}", r.checks);
        assert_eq!(r.warnings.len(), 1);
        let sym = loss_suite(&LossConfig::default().with_ce_variant(CeVariant::Symmetric), 0, Faults::default()).unwrap();
        assert!(sym.warnings.is_empty());
    }

    #[test]
    fn injected_fault_fails() {
        let r = loss_suite(&LossConfig::default(), 0, Faults { wrong_gradient: true }).unwrap();
        assert!(!r.all_passed());
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(2.0, 1.0, 1e-6), 0.5);
        assert!(rel_err(1e-12, 0.0, 1e-6) < 1e-5);
    }
}
