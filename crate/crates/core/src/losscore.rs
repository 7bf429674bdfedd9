//! Segmentation losses with analytic gradients.
//!
//! All losses work on flat arrays: a binary [`Target`] `t` and a
//! [`Prediction`] `y` with values in `[0, 1]`, both of length `N`.
//!
//! - soft Jaccard: `J(t, y) = 1 - (Σ t·y + ε) / (Σ t + Σ y - Σ t·y + ε)`
//! - cross-entropy: `-(1/N) Σ t·ln(y + ε)`, optionally with the
//!   `(1 - t)·ln(1 - y + ε)` term ([`CeVariant::Symmetric`])
//! - Filtered Jaccard Loss: `k_G·G(t, y)·LP(S) + k_J·J(t, y)·HP(S)` where
//!   `S = Σ t` and `LP`/`HP` are steep sigmoid gates around `p_c`/`p'_c`.
//!   `G` is the inverse Jaccard (`FJL1`) or the normalised cross-entropy
//!   (`FJL2`).
//!
//! The gates depend on the target only, so the FJL gradient with respect to
//! `y` is `k_G·LP·∇G + k_J·HP·∇J`.
//!
//! Reductions use pairwise summation so results do not depend on how a
//! caller chunks its data.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, shape, Result};
use crate::raster::Mask;

/// Binary ground truth for one image (or one class channel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    labels: Vec<u8>,
    positives: usize,
}

impl Target {
    /// Build a target from 0/1 labels.
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if labels.is_empty() {
            return Err(invalid("target must contain at least one pixel"));
        }
        if let Some(bad) = labels.iter().find(|&&v| v > 1) {
            return Err(invalid(format!("target labels must be 0 or 1, found {bad}")));
        }
        let positives = labels.iter().filter(|&&v| v == 1).count();
        Ok(Self { labels, positives })
    }

    pub fn from_bools(values: &[bool]) -> Result<Self> {
        Self::new(values.iter().map(|&b| u8::from(b)).collect())
    }

    pub fn from_mask(mask: &Mask) -> Result<Self> {
        Self::from_bools(mask.data())
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of foreground pixels, `S`.
    pub fn positives(&self) -> usize {
        self.positives
    }

    #[inline]
    fn at(&self, i: usize) -> f64 {
        f64::from(self.labels[i])
    }
}

/// Model output for one image (or one class channel), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    values: Vec<f64>,
}

impl Prediction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("prediction must contain at least one pixel"));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("prediction values must lie in [0, 1], found {bad}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Which cross-entropy expression backs `CE` and `G_L2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeVariant {
    /// Positive-class term only: `-(1/N) Σ t·ln(y + ε)`. Identically zero when
    /// the target is empty.
    #[default]
    AsWritten,
    /// Binary cross-entropy with both terms.
    Symmetric,
}

impl FromStr for CeVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" => Ok(Self::AsWritten),
            "symmetric" => Ok(Self::Symmetric),
            other => Err(config(format!("unknown CE variant '{other}' (expected as-written|symmetric)"))),
        }
    }
}

/// Constants shared by every loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Smoothing constant of the Jaccard ratio and the log argument.
    pub epsilon: f64,
    /// Steepness of the sigmoid gates.
    pub m: f64,
    /// Cut-off of the low-pass gate.
    pub p_c: f64,
    /// Cut-off of the high-pass gate.
    pub p_prime_c: f64,
    /// Weight of the compensatory term.
    pub k_g: f64,
    /// Weight of the Jaccard term.
    pub k_j: f64,
    /// Largest attainable cross-entropy, `-ln(ε)`.
    pub max_ce: f64,
    pub ce_variant: CeVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        let epsilon = 1e-7;
        Self {
            epsilon,
            m: 1000.0,
            p_c: 0.5,
            p_prime_c: 0.5,
            k_g: 1.0,
            k_j: 1.0,
            max_ce: -f64::ln(epsilon),
            ce_variant: CeVariant::AsWritten,
        }
    }
}

impl LossConfig {
    /// Default constants with a different `ε`; `max_ce` follows it.
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, max_ce: -epsilon.ln(), ..Self::default() }
    }

    pub fn with_ce_variant(mut self, variant: CeVariant) -> Self {
        self.ce_variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.m.is_nan() || self.m <= 0.0 {
            return Err(config(format!("m must be positive, got {}", self.m)));
        }
        if !(self.k_g >= 0.0 && self.k_j >= 0.0) {
            return Err(config("k_g and k_j must be non-negative"));
        }
        if !self.p_c.is_finite() || !self.p_prime_c.is_finite() {
            return Err(config("cut-off points must be finite"));
        }
        if (self.max_ce + self.epsilon.ln()).abs() > 1e-4 {
            return Err(config(format!("max_ce must equal -ln(epsilon) = {:.4}, got {}", -self.epsilon.ln(), self.max_ce)));
        }
        Ok(())
    }
}

/// Loss selector used by training and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Jaccard,
    #[serde(rename = "ce")]
    CrossEntropy,
    Fjl1,
    Fjl2,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [Self::Jaccard, Self::CrossEntropy, Self::Fjl1, Self::Fjl2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Jaccard => "jaccard",
            Self::CrossEntropy => "ce",
            Self::Fjl1 => "fjl1",
            Self::Fjl2 => "fjl2",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jaccard" => Ok(Self::Jaccard),
            "ce" => Ok(Self::CrossEntropy),
            "fjl1" => Ok(Self::Fjl1),
            "fjl2" => Ok(Self::Fjl2),
            other => Err(config(format!("unknown loss '{other}' (expected jaccard|ce|fjl1|fjl2)"))),
        }
    }
}

/// The two compensatory choices of the Filtered Jaccard Loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FjlVariant {
    /// Inverse Jaccard over complements.
    Fjl1,
    /// Cross-entropy divided by `max_ce`.
    Fjl2,
}

/// Values of the low-pass and high-pass gates at one `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Filters {
    pub low: f64,
    pub high: f64,
}

/// Pairwise (tree) sum of `f(0) + ... + f(n-1)`.
pub(crate) fn pairwise_sum(n: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn go(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= 16 {
            (lo..hi).map(f).sum()
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    go(0, n, f)
}

fn check_pair(t: &Target, y: &Prediction) -> Result<()> {
    if t.len() != y.len() {
        return Err(shape(format!("target has {} pixels, prediction has {}", t.len(), y.len())));
    }
    if t.is_empty() {
        return Err(invalid("empty arrays"));
    }
    Ok(())
}

/// Intersection and union sums of a (possibly complemented) pair.
struct JaccardTerms {
    intersection: f64,
    union: f64,
}

fn jaccard_terms(t: &Target, y: &[f64], complement: bool) -> JaccardTerms {
    fn sums(n: usize, ti: impl Fn(usize) -> f64, yi: impl Fn(usize) -> f64) -> JaccardTerms {
        let intersection = pairwise_sum(n, &|i| ti(i) * yi(i));
        let sum_t = pairwise_sum(n, &ti);
        let sum_y = pairwise_sum(n, &yi);
        JaccardTerms { intersection, union: sum_t + sum_y - intersection }
    }
    if complement {
        sums(y.len(), |i| 1.0 - t.at(i), |i| 1.0 - y[i])
    } else {
        sums(y.len(), |i| t.at(i), |i| y[i])
    }
}

fn jaccard_value(terms: &JaccardTerms, eps: f64) -> f64 {
    1.0 - (terms.intersection + eps) / (terms.union + eps)
}

/// `∂J/∂y_i = -(t_i (U + ε) - (I + ε)(1 - t_i)) / (U + ε)²`, written into `out`
/// scaled by `scale`. For complemented inputs the chain rule flips the sign.
fn jaccard_grad_into(t: &Target, terms: &JaccardTerms, eps: f64, complement: bool, scale: f64, out: &mut [f64]) {
    let u = terms.union + eps;
    let i_eps = terms.intersection + eps;
    let inv_u2 = 1.0 / (u * u);
    for (i, g) in out.iter_mut().enumerate() {
        let ti = if complement { 1.0 - t.at(i) } else { t.at(i) };
        let d = -(ti * u - i_eps * (1.0 - ti)) * inv_u2;
        *g += scale * if complement { -d } else { d };
    }
}

/// Soft Jaccard loss, in `[0, 1]`.
pub fn soft_jaccard(t: &Target, y: &Prediction, cfg: &LossConfig) -> Result<f64> {
    check_pair(t, y)?;
    Ok(jaccard_value(&jaccard_terms(t, y.values(), false), cfg.epsilon))
}

/// Inverse Jaccard, i.e. soft Jaccard of the complements `1 - t`, `1 - y`.
pub fn inverse_jaccard(t: &Target, y: &Prediction, cfg: &LossConfig) -> Result<f64> {
    check_pair(t, y)?;
    Ok(jaccard_value(&jaccard_terms(t, y.values(), true), cfg.epsilon))
}

fn ce_value(t: &Target, y: &[f64], cfg: &LossConfig) -> f64 {
    let eps = cfg.epsilon;
    let n = y.len();
    let total = match cfg.ce_variant {
        CeVariant::AsWritten => pairwise_sum(n, &|i| {
            if t.labels[i] == 1 {
                (y[i] + eps).ln()
            } else {
                0.0
            }
        }),
        CeVariant::Symmetric => pairwise_sum(n, &|i| {
            if t.labels[i] == 1 {
                (y[i] + eps).ln()
            } else {
                (1.0 - y[i] + eps).ln()
            }
        }),
    };
    -total / n as f64
}

fn ce_grad_into(t: &Target, y: &[f64], cfg: &LossConfig, scale: f64, out: &mut [f64]) {
    let eps = cfg.epsilon;
    let n = y.len() as f64;
    for (i, g) in out.iter_mut().enumerate() {
        let yi = y[i].clamp(eps, 1.0 - eps);
        let d = if t.labels[i] == 1 {
            -1.0 / (yi + eps)
        } else {
            match cfg.ce_variant {
                CeVariant::AsWritten => 0.0,
                CeVariant::Symmetric => 1.0 / (1.0 - yi + eps),
            }
        };
        *g += scale * d / n;
    }
}

/// Mean cross-entropy (not normalised).
pub fn cross_entropy(t: &Target, y: &Prediction, cfg: &LossConfig) -> Result<f64> {
    check_pair(t, y)?;
    Ok(ce_value(t, y.values(), cfg))
}

/// Cross-entropy divided by `max_ce`; in `[0, 1]` for [`CeVariant::AsWritten`].
pub fn normalized_ce(t: &Target, y: &Prediction, cfg: &LossConfig) -> Result<f64> {
    check_pair(t, y)?;
    Ok(ce_value(t, y.values(), cfg) / cfg.max_ce)
}

/// Sigmoid low-pass and high-pass gates evaluated at `s`.
///
/// `exp` overflow saturates to `+inf`, which makes the corresponding gate
/// exactly zero.
pub fn sigmoid_filters(s: f64, cfg: &LossConfig) -> Filters {
    let low = 1.0 / (1.0 + (cfg.m * (s - cfg.p_c)).exp());
    let high = 1.0 / (1.0 + (cfg.m * (cfg.p_prime_c - s)).exp());
    Filters { low, high }
}

fn gates(t: &Target, cfg: &LossConfig) -> Filters {
    sigmoid_filters(t.positives() as f64, cfg)
}

/// Filtered Jaccard Loss.
pub fn fjl(t: &Target, y: &Prediction, variant: FjlVariant, cfg: &LossConfig) -> Result<f64> {
    check_pair(t, y)?;
    let kind = match variant {
        FjlVariant::Fjl1 => LossKind::Fjl1,
        FjlVariant::Fjl2 => LossKind::Fjl2,
    };
    Ok(value_unchecked(kind, t, y.values(), cfg))
}

fn value_unchecked(kind: LossKind, t: &Target, y: &[f64], cfg: &LossConfig) -> f64 {
    let eps = cfg.epsilon;
    match kind {
        LossKind::Jaccard => jaccard_value(&jaccard_terms(t, y, false), eps),
        LossKind::CrossEntropy => ce_value(t, y, cfg),
        LossKind::Fjl1 | LossKind::Fjl2 => {
            let f = gates(t, cfg);
            let compensatory =
                if kind == LossKind::Fjl1 { jaccard_value(&jaccard_terms(t, y, true), eps) } else { ce_value(t, y, cfg) / cfg.max_ce };
            let jaccard = jaccard_value(&jaccard_terms(t, y, false), eps);
            cfg.k_g * compensatory * f.low + cfg.k_j * jaccard * f.high
        }
    }
}

/// Loss value for any [`LossKind`].
pub fn loss(kind: LossKind, t: &Target, y: &Prediction, cfg: &LossConfig) -> Result<f64> {
    check_pair(t, y)?;
    Ok(value_unchecked(kind, t, y.values(), cfg))
}

/// Analytic gradient `∂loss/∂y_i`.
pub fn loss_gradient(kind: LossKind, t: &Target, y: &Prediction, cfg: &LossConfig) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(kind, t, y, cfg)?.1)
}

/// Loss value and gradient in one pass over the sums.
pub fn loss_and_gradient(kind: LossKind, t: &Target, y: &Prediction, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    check_pair(t, y)?;
    let y = y.values();
    let eps = cfg.epsilon;
    let mut grad = vec![0.0; y.len()];
    let value = match kind {
        LossKind::Jaccard => {
            let terms = jaccard_terms(t, y, false);
            jaccard_grad_into(t, &terms, eps, false, 1.0, &mut grad);
            jaccard_value(&terms, eps)
        }
        LossKind::CrossEntropy => {
            ce_grad_into(t, y, cfg, 1.0, &mut grad);
            ce_value(t, y, cfg)
        }
        LossKind::Fjl1 | LossKind::Fjl2 => {
            let f = gates(t, cfg);
            let direct = jaccard_terms(t, y, false);
            let jaccard = jaccard_value(&direct, eps);
            let compensatory = if kind == LossKind::Fjl1 {
                let inverse = jaccard_terms(t, y, true);
                jaccard_grad_into(t, &inverse, eps, true, cfg.k_g * f.low, &mut grad);
                jaccard_value(&inverse, eps)
            } else {
                ce_grad_into(t, y, cfg, cfg.k_g * f.low / cfg.max_ce, &mut grad);
                ce_value(t, y, cfg) / cfg.max_ce
            };
            jaccard_grad_into(t, &direct, eps, false, cfg.k_j * f.high, &mut grad);
            cfg.k_g * compensatory * f.low + cfg.k_j * jaccard * f.high
        }
    };
    Ok((value, grad))
}

/// Per-class targets and prediction channels of a multiclass batch.
#[derive(Debug, Clone)]
pub struct ClassStack {
    targets: Vec<Target>,
    predictions: Vec<Prediction>,
}

impl ClassStack {
    /// Targets must be mutually exclusive: a pixel belongs to at most one
    /// class (pixels of no class are empty/fill pixels).
    pub fn new(targets: Vec<Target>, predictions: Vec<Prediction>) -> Result<Self> {
        if targets.len() < 2 {
            return Err(invalid("a class stack needs at least two classes"));
        }
        if targets.len() != predictions.len() {
            return Err(shape(format!("{} class targets but {} prediction channels", targets.len(), predictions.len())));
        }
        let n = targets[0].len();
        for (t, y) in targets.iter().zip(&predictions) {
            if t.len() != n || y.len() != n {
                return Err(shape("all class channels must have the same length"));
            }
        }
        for i in 0..n {
            let owners = targets.iter().filter(|t| t.labels[i] == 1).count();
            if owners > 1 {
                return Err(invalid(format!("pixel {i} is labelled with {owners} classes")));
            }
        }
        Ok(Self { targets, predictions })
    }

    pub fn classes(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn predictions(&self) -> &[Prediction] {
        &self.predictions
    }

    /// Per-class pixel counts.
    pub fn counts(&self) -> Vec<usize> {
        self.targets.iter().map(Target::positives).collect()
    }
}

/// Normalised inverse-count class weights, `w_k ∝ 1 / max(count_k, 1)`.
///
/// A class with no pixels gets the floor count 1, i.e. the largest weight.
pub fn class_weights(counts: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Weighted average of one-vs-rest class losses.
pub fn multiclass_loss(stack: &ClassStack, kind: LossKind, cfg: &LossConfig) -> Result<f64> {
    Ok(multiclass_loss_and_gradient(stack, kind, cfg)?.0)
}

/// Weighted multiclass loss and per-class gradients (one vector per channel).
pub fn multiclass_loss_and_gradient(stack: &ClassStack, kind: LossKind, cfg: &LossConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    let weights = class_weights(&stack.counts());
    weighted_class_loss(stack, &weights, kind, cfg)
}

/// Multiclass loss with caller-supplied weights (for example, weights
/// computed over a whole batch while the losses are evaluated per image).
pub fn weighted_class_loss(stack: &ClassStack, weights: &[f64], kind: LossKind, cfg: &LossConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    if weights.len() != stack.classes() {
        return Err(shape(format!("{} weights for {} classes", weights.len(), stack.classes())));
    }
    let total_w: f64 = weights.iter().sum();
    if total_w.is_nan() || total_w <= 0.0 || weights.iter().any(|w| *w < 0.0) {
        return Err(invalid("class weights must be non-negative with a positive sum"));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(stack.classes());
    for ((t, y), w) in stack.targets.iter().zip(&stack.predictions).zip(weights) {
        let (l, mut g) = loss_and_gradient(kind, t, y, cfg)?;
        let scale = w / total_w;
        value += scale * l;
        g.iter_mut().for_each(|v| *v *= scale);
        grads.push(g);
    }
    Ok((value, grads))
}
