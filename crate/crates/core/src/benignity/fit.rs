use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{logistic, RuleOutcome, RuleWeights};
use crate::error::FitError;

const FEATURES: usize = 15;
pub const MIN_ROWS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Threat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty on the directive weights (not the bias).
    pub l2: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            seed: 7,
            epochs: 2000,
            learning_rate: 0.5,
            l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub rows: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub weights: RuleWeights,
    pub folds: Vec<FoldMetrics>,
    /// F1 of the pooled out-of-fold predictions at the chosen threshold.
    pub cv_f1: f64,
    pub cv_precision: f64,
    pub cv_recall: f64,
}

/// Mean logistic loss with an L2 term. Parameters are the 15 directive
/// weights followed by the bias.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    pub x: Vec<[f64; FEATURES]>,
    pub y: Vec<f64>,
    pub l2: f64,
}

impl LogisticObjective {
    pub fn new(x: Vec<[f64; FEATURES]>, y: Vec<f64>, l2: f64) -> Self {
        assert_eq!(x.len(), y.len(), "feature and label counts differ");
        Self { x, y, l2 }
    }

    fn z(params: &[f64], x: &[f64; FEATURES]) -> f64 {
        params[FEATURES] + x.iter().zip(params).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let n = self.x.len() as f64;
        let data: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(x, y)| {
                let z = Self::z(params, x);
                softplus(z) - y * z
            })
            .sum::<f64>()
            / n;
        let reg: f64 = params[..FEATURES].iter().map(|w| w * w).sum::<f64>() * self.l2 / 2.0;
        data + reg
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let n = self.x.len() as f64;
        let mut g = vec![0.0; FEATURES + 1];
        for (x, y) in self.x.iter().zip(&self.y) {
            let err = logistic(Self::z(params, x)) - y;
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += err * xi;
            }
            g[FEATURES] += err;
        }
        for gi in &mut g {
            *gi /= n;
        }
        for (gi, w) in g.iter_mut().zip(&params[..FEATURES]) {
            *gi += self.l2 * w;
        }
        g
    }

    /// Projected gradient descent; directive weights are kept non-negative
    /// so each directive keeps its fixed polarity.
    pub fn minimize(&self, params: &FitParams) -> Vec<f64> {
        let mut p = vec![0.0; FEATURES + 1];
        for _ in 0..params.epochs {
            let g = self.gradient(&p);
            for (pi, gi) in p.iter_mut().zip(&g) {
                *pi -= params.learning_rate * gi;
            }
            for w in &mut p[..FEATURES] {
                *w = w.max(0.0);
            }
        }
        p
    }

    pub fn predict(params: &[f64], x: &[f64; FEATURES]) -> f64 {
        logistic(Self::z(params, x))
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn confusion(scores: &[(f64, bool)], threshold: f64) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &(s, positive) in scores {
        match (s >= threshold, positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Logistic regression over directive features with stratified k-fold
/// cross-validation. The decision threshold is the grid point in
/// 0.01..=0.99 with the best pooled out-of-fold F1 (ties go to the point
/// closest to 0.5). Rows are put in a canonical order before the seeded
/// shuffle, so input order does not affect the result.
pub fn fit_rule_weights(
    labeled: &[(RuleOutcome, Label)],
    folds: usize,
    params: &FitParams,
) -> Result<FitReport, FitError> {
    if folds < 2 {
        return Err(FitError::InvalidFolds(folds));
    }
    if labeled.len() < MIN_ROWS {
        return Err(FitError::TooFewRows {
            needed: MIN_ROWS,
            got: labeled.len(),
        });
    }
    let mut rows: Vec<([f64; FEATURES], f64)> = labeled
        .iter()
        .map(|(o, l)| (o.features(), if *l == Label::Threat { 1.0 } else { 0.0 }))
        .collect();
    rows.sort_by(|a, b| {
        let ka: Vec<i8> = a.0.iter().map(|v| *v as i8).collect();
        let kb: Vec<i8> = b.0.iter().map(|v| *v as i8).collect();
        ka.cmp(&kb).then(a.1.total_cmp(&b.1))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut positives: Vec<usize> = (0..rows.len()).filter(|i| rows[*i].1 == 1.0).collect();
    let mut negatives: Vec<usize> = (0..rows.len()).filter(|i| rows[*i].1 == 0.0).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(FitError::DegenerateLabels);
    }
    if folds > positives.len().min(negatives.len()) {
        return Err(FitError::InvalidFolds(folds));
    }
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let mut fold_of = vec![0usize; rows.len()];
    for (k, i) in positives.iter().chain(negatives.iter()).enumerate() {
        fold_of[*i] = k % folds;
    }

    let mut oof = vec![0.0; rows.len()];
    for f in 0..folds {
        let (x, y): (Vec<_>, Vec<_>) = rows
            .iter()
            .zip(&fold_of)
            .filter(|(_, k)| **k != f)
            .map(|(r, _)| *r)
            .unzip();
        let p = LogisticObjective::new(x, y, params.l2).minimize(params);
        for (i, r) in rows.iter().enumerate() {
            if fold_of[i] == f {
                oof[i] = LogisticObjective::predict(&p, &r.0);
            }
        }
    }

    let pooled: Vec<(f64, bool)> = oof.iter().zip(&rows).map(|(s, r)| (*s, r.1 == 1.0)).collect();
    let mut best = (0.5, -1.0);
    for step in 1..100 {
        let t = step as f64 / 100.0;
        let (_, _, f1) = confusion(&pooled, t);
        let closer = (t - 0.5).abs() < (best.0 - 0.5_f64).abs();
        if f1 > best.1 + 1e-12 || ((f1 - best.1).abs() <= 1e-12 && closer) {
            best = (t, f1);
        }
    }
    let threshold = best.0;
    let (cv_precision, cv_recall, cv_f1) = confusion(&pooled, threshold);

    let fold_metrics = (0..folds)
        .map(|f| {
            let part: Vec<(f64, bool)> = pooled
                .iter()
                .zip(&fold_of)
                .filter(|(_, k)| **k == f)
                .map(|(p, _)| *p)
                .collect();
            let (precision, recall, f1) = confusion(&part, threshold);
            FoldMetrics {
                fold: f,
                rows: part.len(),
                precision,
                recall,
                f1,
            }
        })
        .collect();

    let (x, y): (Vec<_>, Vec<_>) = rows.iter().copied().unzip();
    let p = LogisticObjective::new(x, y, params.l2).minimize(params);
    let mut w = [0.0; FEATURES];
    w.copy_from_slice(&p[..FEATURES]);
    Ok(FitReport {
        weights: RuleWeights::from_vector(&w, p[FEATURES], threshold),
        folds: fold_metrics,
        cv_f1,
        cv_precision,
        cv_recall,
    })
}
