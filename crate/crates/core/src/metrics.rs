//! Classification metrics, ROC analysis, the paired DeLong test and
//! bootstrap confidence intervals.

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng as _;

pub const DEFAULT_CUTOFF: f64 = 0.5;

/// Smallest reported p-value; anything below is clamped and flagged.
pub const P_FLOOR: f64 = 1e-300;

/// Scores (nominally probabilities of the positive class) with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPredictions {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("scores must be finite".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!("labels must be 0 or 1, found {bad}")));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `[negatives, positives]`
    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - pos, pos]
    }

    fn has_both_classes(&self) -> bool {
        let [neg, pos] = self.class_counts();
        neg > 0 && pos > 0
    }

    fn resample(&self, idx: &[usize]) -> Self {
        Self {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// `1` iff `score >= cutoff`.
pub fn binarize(scores: &[f64], cutoff: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= cutoff)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[u8], labels: &[u8]) -> Result<Self> {
        if pred.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions but {} labels",
                pred.len(),
                labels.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &y) in pred.iter().zip(labels) {
            match (p, y) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 0) => c.tn += 1,
                (0, 1) => c.fn_ += 1,
                _ => return Err(Error::Input("predictions and labels must be 0 or 1".into())),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn accuracy(pred: &[u8], labels: &[u8]) -> Result<f64> {
    let c = Confusion::from_predictions(pred, labels)?;
    if c.total() == 0 {
        return Err(Error::Input("no predictions".into()));
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// Sensitivity, `TP / (TP + FN)`. Requires at least one positive.
pub fn recall(pred: &[u8], labels: &[u8]) -> Result<f64> {
    let c = Confusion::from_predictions(pred, labels)?;
    if c.tp + c.fn_ == 0 {
        return Err(Error::MissingClass);
    }
    Ok(c.tp as f64 / (c.tp + c.fn_) as f64)
}

/// Mean of the two per-class recalls.
pub fn balanced_accuracy(pred: &[u8], labels: &[u8]) -> Result<f64> {
    let c = Confusion::from_predictions(pred, labels)?;
    if c.tp + c.fn_ == 0 || c.tn + c.fp == 0 {
        return Err(Error::MissingClass);
    }
    let tpr = c.tp as f64 / (c.tp + c.fn_) as f64;
    let tnr = c.tn as f64 / (c.tn + c.fp) as f64;
    Ok(0.5 * (tpr + tnr))
}

/// 1-based ranks with ties replaced by their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the mean of ranks i+1..=j+1
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney estimate `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` computed from midranks.
pub fn auroc(sp: &ScoredPredictions) -> Result<f64> {
    let [n_neg, n_pos] = sp.class_counts();
    if n_neg == 0 || n_pos == 0 {
        return Err(Error::MissingClass);
    }
    let ranks = midranks(&sp.scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(&sp.labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let m = n_pos as f64;
    let u = rank_sum - m * (m + 1.0) / 2.0;
    Ok(u / (m * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Score threshold producing each point (`score >= threshold` is
    /// positive). The first point uses `+∞`.
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    /// Trapezoid area under the curve.
    pub fn area(&self) -> f64 {
        self.fpr
            .windows(2)
            .zip(self.tpr.windows(2))
            .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
            .sum()
    }

    pub fn len(&self) -> usize {
        self.fpr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fpr.is_empty()
    }
}

pub fn roc_curve(sp: &ScoredPredictions) -> Result<RocCurve> {
    let [n_neg, n_pos] = sp.class_counts();
    if n_neg == 0 || n_pos == 0 {
        return Err(Error::MissingClass);
    }
    let mut order: Vec<usize> = (0..sp.len()).collect();
    order.sort_by(|&a, &b| sp.scores[b].total_cmp(&sp.scores[a]));
    let mut curve = RocCurve {
        fpr: vec![0.0],
        tpr: vec![0.0],
        thresholds: vec![f64::INFINITY],
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = sp.scores[order[i]];
        while i < order.len() && sp.scores[order[i]] == t {
            if sp.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.fpr.push(fp as f64 / n_neg as f64);
        curve.tpr.push(tp as f64 / n_pos as f64);
        curve.thresholds.push(t);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// H1: AUC(a) < AUC(b)
    ALess,
    /// H1: AUC(a) > AUC(b)
    AGreater,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeLongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p_one_tailed: f64,
    /// The exact p-value was below [`P_FLOOR`] and has been clamped.
    pub p_underflow: bool,
}

/// Structural components `(V10 over positives, V01 over negatives)`.
fn structural_components(sp: &ScoredPredictions) -> (Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = sp.positives().collect();
    let neg: Vec<f64> = sp.negatives().collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let tz = midranks(&all);
    let tx = midranks(&pos);
    let ty = midranks(&neg);
    let v10 = (0..pos.len()).map(|i| (tz[i] - tx[i]) / n).collect();
    let v01 = (0..neg.len())
        .map(|j| 1.0 - (tz[pos.len() + j] - ty[j]) / m)
        .collect();
    (v10, v01)
}

impl ScoredPredictions {
    fn positives(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().zip(&self.labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s)
    }

    fn negatives(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().zip(&self.labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s)
    }
}

/// Sample covariance, evaluated symmetrically in its arguments.
fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (k - 1.0)
}

/// Upper tail of the standard normal, `P(Z > z)`.
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Paired one-tailed DeLong comparison of two scorers on the same instances.
pub fn delong_test(
    a: &ScoredPredictions,
    b: &ScoredPredictions,
    alternative: Alternative,
) -> Result<DeLongResult> {
    if a.labels != b.labels {
        return Err(Error::Input(
            "paired comparison needs identical instances and labels".into(),
        ));
    }
    let [n_neg, n_pos] = a.class_counts();
    if n_neg < 2 || n_pos < 2 {
        return Err(Error::Degenerate(
            "need at least two instances of each class".into(),
        ));
    }
    let auc_a = auroc(a)?;
    let auc_b = auroc(b)?;
    let (a10, a01) = structural_components(a);
    let (b10, b01) = structural_components(b);
    let (m, n) = (n_pos as f64, n_neg as f64);
    let var_a = covariance(&a10, &a10) / m + covariance(&a01, &a01) / n;
    let var_b = covariance(&b10, &b10) / m + covariance(&b01, &b01) / n;
    let cov_ab = covariance(&a10, &b10) / m + covariance(&a01, &b01) / n;
    let var_diff = (var_a + var_b) - 2.0 * cov_ab;
    if !(var_diff.is_finite() && var_diff > f64::EPSILON * (var_a + var_b)) {
        return Err(Error::Degenerate(format!(
            "variance of the AUC difference is {var_diff:e}"
        )));
    }
    let z = (auc_a - auc_b) / var_diff.sqrt();
    let p = match alternative {
        Alternative::AGreater => normal_sf(z),
        Alternative::ALess => normal_sf(-z),
    };
    let p_underflow = p < P_FLOOR;
    Ok(DeLongResult {
        auc_a,
        auc_b,
        z,
        p_one_tailed: p.clamp(P_FLOOR, 1.0),
        p_underflow,
    })
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Linear-interpolation percentile of unsorted data, `q ∈ [0, 1]`.
/// Reorders `values`.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty data");
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut lo_v, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lo_v;
    }
    let hi_v = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_v + (hi_v - lo_v) * frac
}

pub const DEFAULT_N_BOOT: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Percentile bootstrap interval of `statistic`.
///
/// Resample `i` draws from its own stream `(seed, i)`, so the result does
/// not depend on scheduling. Resamples missing a class are redrawn; more
/// than `10 · n_boot` redraws in total is an error.
pub fn bootstrap_ci<F>(
    sp: &ScoredPredictions,
    statistic: F,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: Fn(&ScoredPredictions) -> Result<f64> + Sync,
{
    if n_boot == 0 {
        return Err(Error::Config("n_boot must be >= 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level must be in (0, 1), got {level}")));
    }
    if sp.is_empty() {
        return Err(Error::Input("no predictions".into()));
    }
    let cap = 10 * n_boot;
    let n = sp.len();
    let draws: Vec<Result<(f64, usize)>> = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let mut redraws = 0;
            loop {
                let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
                let sample = sp.resample(&idx);
                if sample.has_both_classes() {
                    return Ok((statistic(&sample)?, redraws));
                }
                redraws += 1;
                if redraws > cap {
                    return Err(Error::BootstrapExhausted { redraws });
                }
            }
        })
        .collect();
    let mut values = Vec::with_capacity(n_boot);
    let mut redraws = 0;
    for d in draws {
        let (v, r) = d?;
        values.push(v);
        redraws += r;
    }
    if redraws > cap {
        return Err(Error::BootstrapExhausted { redraws });
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((
        percentile_sorted(&values, tail),
        percentile_sorted(&values, 1.0 - tail),
    ))
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Elementwise mean of member scores over identical instances.
pub fn ensemble_mean(members: &[ScoredPredictions]) -> Result<ScoredPredictions> {
    let first = members
        .first()
        .ok_or_else(|| Error::Input("ensemble needs at least one member".into()))?;
    if members.iter().any(|m| m.labels != first.labels) {
        return Err(Error::Input(
            "ensemble members must score identical instances".into(),
        ));
    }
    let k = members.len() as f64;
    let scores = (0..first.len())
        .map(|i| members.iter().map(|m| m.scores[i]).sum::<f64>() / k)
        .collect();
    ScoredPredictions::new(scores, first.labels.clone())
}

/// Summary metrics for one scorer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub recall: f64,
    pub auroc: f64,
    pub auroc_ci: (f64, f64),
}

impl EvalReport {
    pub fn compute(sp: &ScoredPredictions, n_boot: usize, seed: u64) -> Result<Self> {
        let pred = binarize(&sp.scores, DEFAULT_CUTOFF);
        Ok(Self {
            n: sp.len(),
            accuracy: accuracy(&pred, &sp.labels)?,
            balanced_accuracy: balanced_accuracy(&pred, &sp.labels)?,
            recall: recall(&pred, &sp.labels)?,
            auroc: auroc(sp)?,
            auroc_ci: bootstrap_ci(sp, auroc, n_boot, DEFAULT_LEVEL, seed)?,
        })
    }
}
