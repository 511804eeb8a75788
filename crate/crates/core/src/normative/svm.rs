//! Linear SVM trained by subgradient descent on the regularized hinge loss,
//! and stratified k-fold cross-validation around it.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub c_reg: f64,
    pub epochs: usize,
    /// Step size at epoch `e` (1-based) is `step0 / sqrt(e)`.
    pub step0: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c_reg: 1.0,
            epochs: 200,
            step0: 1e-2,
        }
    }
}

/// A trained linear classifier. Inputs are standardized with the training
/// statistics before `w·z + b` is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
    /// Majority training label, used when no feature varies or the score is 0.
    pub majority: f64,
    informative: bool,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w
            .iter()
            .zip(x)
            .zip(self.mean.iter().zip(&self.scale))
            .map(|((w, x), (m, s))| w * (x - m) / s)
            .sum::<f64>()
            + self.b
    }

    /// Predicted label in {-1, +1}.
    pub fn predict(&self, x: &[f64]) -> f64 {
        if !self.informative {
            return self.majority;
        }
        let d = self.decision(x);
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            self.majority
        }
    }
}

fn check_xy(features: &[Vec<f64>], labels: &[f64]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("ragged feature matrix".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
        return Err(Error::Invalid(format!("labels must be +1 or -1, got {l}")));
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("non-finite feature".into()));
    }
    Ok(dim)
}

/// Fits a linear SVM on `features` (one row per example) and `labels` in
/// {-1, +1}. Minimizes `|w|²/(2·C·M) + mean hinge` with one subgradient
/// step per example, visiting examples in a seeded shuffled order.
pub fn svm_train(
    features: &[Vec<f64>],
    labels: &[f64],
    cfg: &SvmConfig,
    seed: u64,
) -> Result<LinearSvm> {
    let dim = check_xy(features, labels)?;
    let m = features.len();
    let pos = labels.iter().filter(|&&l| l > 0.0).count();
    if m < 2 || pos == 0 || pos == m {
        return Err(Error::Invalid(
            "svm needs at least one example of each class".into(),
        ));
    }
    if !(cfg.c_reg > 0.0 && cfg.step0 > 0.0) || cfg.epochs == 0 {
        return Err(Error::Config(format!("invalid svm settings {cfg:?}")));
    }

    let mut mean = vec![0.0; dim];
    let mut scale = vec![1.0; dim];
    let mut informative = false;
    for j in 0..dim {
        let col: Vec<f64> = features.iter().map(|r| r[j]).collect();
        let (mu, var) = super::mean_var(&col);
        mean[j] = mu;
        if var.sqrt() > 1e-12 {
            scale[j] = var.sqrt();
            informative = true;
        }
    }
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|r| {
            r.iter()
                .zip(mean.iter().zip(&scale))
                .map(|(x, (mu, s))| (x - mu) / s)
                .collect()
        })
        .collect();

    let lambda = 1.0 / (cfg.c_reg * m as f64);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..m).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng::stream(seed, 0x5F3, epoch as u64));
        let eta = cfg.step0 / (epoch as f64).sqrt();
        for &i in &order {
            let y = labels[i];
            let margin = y * (w.iter().zip(&z[i]).map(|(a, x)| a * x).sum::<f64>() + b);
            for (wj, xj) in w.iter_mut().zip(&z[i]) {
                let mut g = lambda * *wj;
                if margin < 1.0 {
                    g -= y * xj;
                }
                *wj -= eta * g;
            }
            if margin < 1.0 {
                b += eta * y;
            }
        }
    }
    Ok(LinearSvm {
        mean,
        scale,
        w,
        b,
        majority: if 2 * pos >= m { 1.0 } else { -1.0 },
        informative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KFoldConfig {
    pub k: usize,
    /// Train on one part and test on the other k-1 instead of the reverse.
    pub inverted: bool,
    pub svm: SvmConfig,
}

impl Default for KFoldConfig {
    fn default() -> Self {
        KFoldConfig {
            k: 10,
            inverted: false,
            svm: SvmConfig::default(),
        }
    }
}

/// Confusion counts of one fold; positive is the +1 (disease) class.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub test_indices: Vec<usize>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub folds: Vec<FoldResult>,
}

impl ClassifierReport {
    fn from_folds(folds: Vec<FoldResult>) -> Self {
        let sum = |f: fn(&FoldResult) -> usize| folds.iter().map(f).sum::<usize>() as f64;
        let (tp, fp, tn, fn_) = (sum(|f| f.tp), sum(|f| f.fp), sum(|f| f.tn), sum(|f| f.fn_));
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        ClassifierReport {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            folds,
        }
    }

    /// Multi-line text block: pooled metrics then one line per fold.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "accuracy\t{:.4}\nprecision\t{:.4}\nrecall\t{:.4}\n",
            self.accuracy, self.precision, self.recall
        );
        for f in &self.folds {
            s.push_str(&format!(
                "fold {}\ttp={}\tfp={}\ttn={}\tfn={}\n",
                f.fold, f.tp, f.fp, f.tn, f.fn_
            ));
        }
        s
    }
}

/// Stratified k-fold cross-validation of [`svm_train`]. Each class is
/// shuffled with `seed` and dealt round-robin into `k` parts.
pub fn kfold_cv(
    features: &[Vec<f64>],
    labels: &[f64],
    cfg: &KFoldConfig,
    seed: u64,
) -> Result<ClassifierReport> {
    check_xy(features, labels)?;
    let k = cfg.k;
    if k < 2 {
        return Err(Error::range("k", k, ">= 2"));
    }
    let mut fold_of = vec![0usize; labels.len()];
    for (lane, class) in [(1u64, 1.0), (2, -1.0)] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Invalid(format!(
                "class {class:+} has {} members, k-fold needs at least {k}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng::stream(seed, lane, 0));
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }

    let folds = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| {
                let held_out = fold_of[i] == fold;
                held_out == cfg.inverted
            });
            let x: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
            let y: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
            let model = svm_train(&x, &y, &cfg.svm, rng::mix(seed, fold as u64))?;
            let mut r = FoldResult {
                fold,
                test_indices: test.clone(),
                tp: 0,
                fp: 0,
                tn: 0,
                fn_: 0,
            };
            for &i in &test {
                match (model.predict(&features[i]) > 0.0, labels[i] > 0.0) {
                    (true, true) => r.tp += 1,
                    (true, false) => r.fp += 1,
                    (false, false) => r.tn += 1,
                    (false, true) => r.fn_ += 1,
                }
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassifierReport::from_folds(folds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut r = rng::stream(seed, 0, 0);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            x.push(vec![
                2.0 * s + noise.sample(&mut r),
                2.0 * s + noise.sample(&mut r),
            ]);
            y.push(s);
        }
        (x, y)
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let (x, y) = blobs(40, 0.1, 1);
        let m = svm_train(&x, &y, &SvmConfig::default(), 3).unwrap();
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| m.predict(xi) == yi)
            .count();
        assert_eq!(acc, 40);
        assert_eq!(m, svm_train(&x, &y, &SvmConfig::default(), 3).unwrap());
    }

    #[test]
    fn constant_features_fall_back_to_majority() {
        let x = vec![vec![0.0, 0.0]; 10];
        let y = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        let m = svm_train(&x, &y, &SvmConfig::default(), 0).unwrap();
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| m.predict(xi) == yi)
            .count() as f64
            / 10.0;
        assert_eq!(acc, 0.7);
    }

    #[test]
    fn svm_rejects_single_class() {
        assert!(svm_train(
            &[vec![1.0], vec![2.0]],
            &[1.0, 1.0],
            &SvmConfig::default(),
            0
        )
        .is_err());
        assert!(svm_train(
            &[vec![1.0], vec![2.0]],
            &[1.0, 0.0],
            &SvmConfig::default(),
            0
        )
        .is_err());
    }

    #[test]
    fn kfold_on_separable_data() {
        let (x, y) = blobs(60, 0.3, 2);
        let cfg = KFoldConfig::default();
        let rep = kfold_cv(&x, &y, &cfg, 7).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep, kfold_cv(&x, &y, &cfg, 7).unwrap());
        let mut seen: Vec<usize> = rep
            .folds
            .iter()
            .flat_map(|f| f.test_indices.clone())
            .collect();
        seen.sort();
        assert_eq!(seen, (0..60).collect::<Vec<_>>());
        for f in &rep.folds {
            assert_eq!(f.tp + f.fp + f.tn + f.fn_, f.test_indices.len());
        }
    }

    #[test]
    fn inverted_split_trains_on_one_part() {
        let (x, y) = blobs(40, 0.3, 5);
        let cfg = KFoldConfig {
            inverted: true,
            k: 4,
            ..KFoldConfig::default()
        };
        let rep = kfold_cv(&x, &y, &cfg, 1).unwrap();
        assert!(rep.folds.iter().all(|f| f.test_indices.len() == 30));
    }

    #[test]
    fn kfold_needs_k_members_per_class() {
        let (x, y) = blobs(12, 0.3, 5);
        assert!(kfold_cv(&x, &y, &KFoldConfig::default(), 0).is_err());
    }
}
