//! Scene-pooled segmentation metrics and cross-validation folds.
//!
//! Counts are summed over all scenes before any division, so a large scene
//! weighs more than a small one. A ratio whose numerator and denominator are
//! both zero is defined as 1 (nothing to find, nothing found).

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::raster::Mask;
use crate::seed;

/// Pixel counts of one binary comparison.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub scene_id: String,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Count agreement between ground truth and prediction.
pub fn confusion(gt: &Mask, pred: &Mask) -> Result<Confusion> {
    if !gt.same_dims(pred) || gt.channels() != pred.channels() {
        return Err(shape("ground truth and prediction differ in size"));
    }
    Ok(confusion_slices(gt.data(), pred.data()))
}

pub fn confusion_slices(gt: &[bool], pred: &[bool]) -> Confusion {
    let mut c = Confusion::default();
    for (&g, &p) in gt.iter().zip(pred) {
        match (g, p) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    c
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics of one class (or of a binary task).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

impl ClassMetrics {
    pub fn from_counts(c: &Confusion) -> Self {
        Self {
            jaccard: ratio(c.tp, c.tp + c.fp + c.fn_),
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            accuracy: ratio(c.tp + c.tn, c.total()),
        }
    }
}

/// Pooled result over a set of scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub scenes: usize,
    /// Per-class values, multiclass only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<(String, ClassMetrics)>,
    /// Unweighted mean of per-class Jaccard, multiclass only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_jaccard: Option<f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>9} {:>9} {:>9}", "class", "jaccard", "precision", "recall", "accuracy")?;
        for (name, m) in &self.classes {
            writeln!(f, "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", name, m.jaccard, m.precision, m.recall, m.accuracy)?;
        }
        let label = if self.classes.is_empty() { "pooled" } else { "overall" };
        write!(f, "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", label, self.jaccard, self.precision, self.recall, self.accuracy)?;
        if let Some(avg) = self.average_jaccard {
            write!(f, "\naverage jaccard {avg:.4}")?;
        }
        writeln!(f, "\nscenes {}", self.scenes)
    }
}

/// Sum of counts over scenes.
pub fn pool(confusions: &[Confusion]) -> Confusion {
    let mut total = Confusion { scene_id: "pooled".into(), ..Confusion::default() };
    confusions.iter().for_each(|c| total.add(c));
    total
}

/// Scene-pooled binary metrics.
pub fn aggregate(confusions: &[Confusion]) -> Result<MetricReport> {
    if confusions.is_empty() {
        return Err(invalid("cannot aggregate zero scenes"));
    }
    let m = ClassMetrics::from_counts(&pool(confusions));
    Ok(MetricReport {
        jaccard: m.jaccard,
        precision: m.precision,
        recall: m.recall,
        accuracy: m.accuracy,
        scenes: confusions.len(),
        classes: Vec::new(),
        average_jaccard: None,
    })
}

/// `K × K` counts, rows ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    /// Accumulate one scene of class indices.
    pub fn add(&mut self, gt: &[usize], pred: &[usize]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(shape("ground truth and prediction differ in length"));
        }
        let k = self.classes();
        for (&g, &p) in gt.iter().zip(pred) {
            if g >= k || p >= k {
                return Err(invalid(format!("class index out of range for {k} classes")));
            }
            self.counts[g][p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            row.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
    }

    /// One-vs-rest counts of class `k`.
    pub fn one_vs_rest(&self, k: usize) -> Confusion {
        let total: u64 = self.counts.iter().flatten().sum();
        let tp = self.counts[k][k];
        let fn_ = self.counts[k].iter().sum::<u64>() - tp;
        let fp = self.counts.iter().map(|row| row[k]).sum::<u64>() - tp;
        Confusion { tp, fp, fn_, tn: total - tp - fp - fn_, scene_id: String::new() }
    }
}

/// Per-class one-vs-rest metrics, their average Jaccard, and overall
/// accuracy from the diagonal.
pub fn multiclass_report(matrix: &ConfusionMatrix, names: &[&str], scenes: usize) -> Result<MetricReport> {
    if names.len() != matrix.classes() {
        return Err(shape(format!("{} names for {} classes", names.len(), matrix.classes())));
    }
    let classes: Vec<(String, ClassMetrics)> =
        (0..matrix.classes()).map(|k| (names[k].to_string(), ClassMetrics::from_counts(&matrix.one_vs_rest(k)))).collect();
    let k = classes.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(|(_, m)| f(m)).sum::<f64>() / k;
    let total: u64 = matrix.counts.iter().flatten().sum();
    let diagonal: u64 = (0..matrix.classes()).map(|i| matrix.counts[i][i]).sum();
    let average = mean(|m| m.jaccard);
    Ok(MetricReport {
        jaccard: average,
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        accuracy: ratio(diagonal, total),
        scenes,
        classes,
        average_jaccard: Some(average),
    })
}

/// Shuffle `n` item indices with `seed` and deal them into `k` folds whose
/// sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(invalid(format!("cannot split {n} items into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (i, item) in order.into_iter().enumerate() {
        folds[i % k].push(item);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use proptest::prelude::*;

    fn mask(v: &[bool]) -> Mask {
        Raster::new(1, v.len(), 1, v.to_vec()).unwrap()
    }

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Confusion {
        Confusion { tp, fp, fn_, tn, scene_id: String::new() }
    }

    #[test]
    fn confusion_hand_count() {
        let c = confusion(&mask(&[true, true, false, false]), &mask(&[true, false, true, false])).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (1, 1, 1, 1));
        let gt = mask(&[true, false, true]);
        let same = confusion(&gt, &gt).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let inv = confusion(&gt, &gt.not()).unwrap();
        assert_eq!((inv.tp, inv.tn), (0, 0));
        assert!(confusion(&gt, &mask(&[true])).is_err());
    }

    #[test]
    fn single_scene_metrics() {
        let r = aggregate(&[counts(1, 1, 1, 1)]).unwrap();
        assert!((r.jaccard - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((r.precision, r.recall, r.accuracy), (0.5, 0.5, 0.5));
    }

    #[test]
    fn pooled_differs_from_mean_of_scenes() {
        let r = aggregate(&[counts(1, 0, 1, 0), counts(4, 0, 0, 0)]).unwrap();
        assert!((r.jaccard - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.jaccard - 0.75).abs() > 0.05);
    }

    #[test]
    fn perfect_and_empty_scenes() {
        let r = aggregate(&[counts(5, 0, 0, 5), counts(0, 0, 0, 9)]).unwrap();
        assert_eq!((r.jaccard, r.precision, r.recall, r.accuracy), (1.0, 1.0, 1.0, 1.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn multiclass_conventions() {
        let mut m = ConfusionMatrix::new(3);
        m.add(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap();
        let r = multiclass_report(&m, &["cloud", "shadow", "clear"], 1).unwrap();
        // class 2 absent from both: jaccard 1
        assert_eq!(r.classes[2].1.jaccard, 1.0);
        assert_eq!(r.average_jaccard, Some(1.0));

        let mut confused = ConfusionMatrix::new(3);
        confused.add(&[0, 1, 2, 2], &[1, 1, 2, 2]).unwrap();
        let r = multiclass_report(&confused, &["a", "b", "c"], 1).unwrap();
        assert_eq!(r.classes[0].1.jaccard, 0.0);
        assert_eq!(r.accuracy, 0.75);
        let expected = (0.0 + 0.5 + 1.0) / 3.0;
        assert!((r.average_jaccard.unwrap() - expected).abs() < 1e-15);
        assert!(r.to_string().contains("average jaccard"));
    }

    #[test]
    fn report_json_uses_fn_key() {
        let json = serde_json::to_string(&counts(1, 2, 3, 4)).unwrap();
        assert!(json.contains("\"fn\":3"));
        let r = aggregate(&[counts(1, 2, 3, 4)]).unwrap();
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn folds_examples() {
        let f = make_folds(80, 5, 3).unwrap();
        assert!(f.iter().all(|x| x.len() == 16));
        assert_eq!(make_folds(7, 1, 0).unwrap(), vec![(0..7).collect::<Vec<_>>()]);
        assert_eq!(make_folds(80, 5, 3).unwrap(), f);
        assert_ne!(make_folds(80, 5, 4).unwrap(), f);
        assert!(make_folds(3, 4, 0).is_err());
    }

    fn scene_strategy() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
        (1usize..40).prop_flat_map(|n| (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)))
    }

    proptest! {
        #[test]
        fn jaccard_bounded_by_precision_and_recall(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
            let r = aggregate(&[counts(tp, fp, fn_, tn)]).unwrap();
            prop_assert!(r.jaccard <= r.precision.min(r.recall) + 1e-15);
            for v in [r.jaccard, r.precision, r.recall, r.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn pooled_equals_concatenated(scenes in prop::collection::vec(scene_strategy(), 1..8)) {
            let per: Vec<Confusion> = scenes.iter().map(|(g, p)| confusion_slices(g, p)).collect();
            let gt: Vec<bool> = scenes.iter().flat_map(|s| s.0.clone()).collect();
            let pred: Vec<bool> = scenes.iter().flat_map(|s| s.1.clone()).collect();
            let brute = aggregate(&[confusion_slices(&gt, &pred)]).unwrap();
            let pooled = aggregate(&per).unwrap();
            prop_assert_eq!((brute.jaccard, brute.precision, brute.recall, brute.accuracy),
                (pooled.jaccard, pooled.precision, pooled.recall, pooled.accuracy));
            let mut rev = per.clone();
            rev.reverse();
            prop_assert_eq!(aggregate(&rev).unwrap(), pooled);
        }

        #[test]
        fn folds_partition(n in 1usize..60, k in 1usize..8, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let folds = make_folds(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
