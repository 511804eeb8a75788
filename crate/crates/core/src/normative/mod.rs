//! Normalization conventions, ROI aggregation, abnormal z-scores, spherical
//! SSIM/MSE and group statistics. The linear SVM harness lives in [`svm`].

pub mod svm;

use statrs::function::beta::beta_reg;

use crate::atlas::RoiAtlas;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::mesh::Icosphere;

pub use svm::{
    kfold_cv, svm_train, ClassifierReport, FoldResult, KFoldConfig, LinearSvm, SvmConfig,
};

/// Thickness normalization range in mm.
pub const THICKNESS_MAX_MM: f64 = 5.0;
/// Reference standard deviations below this are rejected.
pub const MIN_REFERENCE_STD: f64 = 1e-8;

/// Maps thickness in mm onto [-1, 1] via `ct/2.5 - 1`, clamping to
/// [0, 5] mm first.
pub fn normalize_thickness(ct_mm: f64) -> f64 {
    ct_mm.clamp(0.0, THICKNESS_MAX_MM) / (THICKNESS_MAX_MM / 2.0) - 1.0
}

pub fn denormalize_thickness(y: f64) -> f64 {
    (y + 1.0) * (THICKNESS_MAX_MM / 2.0)
}

/// Normalizes a slice of thicknesses in place and returns how many values
/// had to be clamped.
pub fn normalize_thickness_slice(values: &mut [f32]) -> usize {
    let mut clamped = 0;
    for v in values.iter_mut() {
        let ct = *v as f64;
        if !(0.0..=THICKNESS_MAX_MM).contains(&ct) {
            clamped += 1;
        }
        *v = normalize_thickness(ct) as f32;
    }
    if clamped > 0 {
        log::warn!("{clamped} thickness values outside [0, {THICKNESS_MAX_MM}] mm were clamped");
    }
    clamped
}

pub fn denormalize_thickness_slice(values: &mut [f32]) {
    for v in values.iter_mut() {
        *v = denormalize_thickness(*v as f64) as f32;
    }
}

/// Age in years scaled by 1/100.
pub fn normalize_age(age_years: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&age_years) {
        return Err(Error::range("age", age_years, "[0, 100] years"));
    }
    Ok(age_years / 100.0)
}

/// Per-ROI arithmetic mean of a single-channel map.
pub fn roi_means(map: &FeatureMap, atlas: &RoiAtlas) -> Result<Vec<f64>> {
    if map.channels() != 1 {
        return Err(Error::Shape(format!(
            "roi_means needs 1 channel, got {}",
            map.channels()
        )));
    }
    roi_means_of(map, 0, atlas)
}

/// Per-ROI mean of channel `c` of `map`.
pub fn roi_means_of(map: &FeatureMap, c: usize, atlas: &RoiAtlas) -> Result<Vec<f64>> {
    if map.order() != atlas.order() {
        return Err(Error::Shape(format!(
            "map order {} vs atlas order {}",
            map.order(),
            atlas.order()
        )));
    }
    if c >= map.channels() {
        return Err(Error::range(
            "channel",
            c,
            format!("[0, {})", map.channels()),
        ));
    }
    let mut sums = vec![0.0f64; atlas.roi_count()];
    for (&v, &l) in map.channel(c).iter().zip(atlas.labels()) {
        sums[l as usize] += v as f64;
    }
    Ok(sums
        .iter()
        .zip(atlas.roi_sizes())
        .map(|(s, n)| s / n as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbnormalScores {
    pub subject_id: String,
    pub scores: Vec<f64>,
}

/// Z-score of each ROI of `subject` against the reference `samples`
/// (one row per sample), using the sample (N-1) standard deviation.
pub fn abnormal_score(
    subject_id: &str,
    subject: &[f64],
    samples: &[Vec<f64>],
) -> Result<AbnormalScores> {
    if samples.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 reference samples, got {}",
            samples.len()
        )));
    }
    let r = subject.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != r) {
        return Err(Error::Shape(format!(
            "sample has {} ROIs, subject has {r}",
            bad.len()
        )));
    }
    let mut scores = Vec::with_capacity(r);
    for roi in 0..r {
        let col: Vec<f64> = samples.iter().map(|s| s[roi]).collect();
        let (mean, var) = mean_var(&col);
        let std = var.sqrt();
        if !(std >= MIN_REFERENCE_STD) {
            return Err(Error::DegenerateReference { roi, std });
        }
        scores.push((subject[roi] - mean) / std);
    }
    if scores.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite abnormal score for {subject_id}"
        )));
    }
    Ok(AbnormalScores {
        subject_id: subject_id.to_string(),
        scores,
    })
}

/// Mean and sample (N-1) variance. The variance is 0 for fewer than two values.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, ss / (n - 1.0))
}

/// Mean squared difference over every channel and vertex.
pub fn mse(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// 2-ring uniform windows for spherical SSIM, reusable across calls on the
/// same mesh.
#[derive(Debug, Clone)]
pub struct SsimWindows {
    order: usize,
    windows: Vec<Vec<u32>>,
}

impl SsimWindows {
    pub fn new(mesh: &Icosphere) -> Self {
        SsimWindows {
            order: mesh.order(),
            windows: (0..mesh.vertex_count())
                .map(|v| mesh.k_ring(v, 2))
                .collect(),
        }
    }

    /// Mean local SSIM between single-channel maps `a` and `b`.
    pub fn ssim(&self, a: &FeatureMap, b: &FeatureMap, data_range: f64) -> Result<f64> {
        a.same_shape(b)?;
        if a.channels() != 1 {
            return Err(Error::Shape(format!(
                "ssim needs 1 channel, got {}",
                a.channels()
            )));
        }
        self.ssim_channels(a.channel(0), b.channel(0), a.order(), data_range)
    }

    pub(crate) fn ssim_channels(
        &self,
        a: &[f32],
        b: &[f32],
        order: usize,
        data_range: f64,
    ) -> Result<f64> {
        if order != self.order || a.len() != self.windows.len() || b.len() != a.len() {
            return Err(Error::Shape(format!(
                "maps of order {order} vs windows of order {}",
                self.order
            )));
        }
        if !(data_range > 0.0) {
            return Err(Error::range("data_range", data_range, "> 0"));
        }
        let c1 = (0.01 * data_range).powi(2);
        let c2 = (0.03 * data_range).powi(2);
        let mut total = 0.0;
        for w in &self.windows {
            let n = w.len() as f64;
            let (mut sa, mut sb) = (0.0, 0.0);
            for &u in w {
                sa += a[u as usize] as f64;
                sb += b[u as usize] as f64;
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
            for &u in w {
                let da = a[u as usize] as f64 - ma;
                let db = b[u as usize] as f64 - mb;
                vaa += da * da;
                vbb += db * db;
                vab += da * db;
            }
            let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
            total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2))
                / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
        }
        Ok(total / self.windows.len() as f64)
    }
}

/// Mean local SSIM over uniform 2-ring windows. Builds the windows on every
/// call; use [`SsimWindows`] when comparing many maps.
pub fn ssim_sphere(
    a: &FeatureMap,
    b: &FeatureMap,
    mesh: &Icosphere,
    data_range: f64,
) -> Result<f64> {
    if a.order() != mesh.order() {
        return Err(Error::Shape(format!(
            "map order {} vs mesh order {}",
            a.order(),
            mesh.order()
        )));
    }
    SsimWindows::new(mesh).ssim(a, b, data_range)
}

/// Two-sided Welch t-test p-value.
pub fn welch_p_value(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateGroup(format!(
            "groups need at least 2 values (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::DegenerateGroup("non-finite value".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::DegenerateGroup(format!(
            "zero variance (var_a={va:e}, var_b={vb:e})"
        )));
    }
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df =
        (sa + sb).powi(2) / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    // P(|T| > t) = I_{df/(df+t²)}(df/2, 1/2)
    let p = beta_reg(df / 2.0, 0.5, df / (df + t * t));
    Ok(p.clamp(0.0, 1.0))
}

/// Indices of the `k` reference ages closest to `age`; ties go to the lower
/// index.
pub fn age_nearest(reference_ages: &[f64], age: f64, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..reference_ages.len()).collect();
    idx.sort_by(|&i, &j| {
        let (di, dj) = (
            (reference_ages[i] - age).abs(),
            (reference_ages[j] - age).abs(),
        );
        di.total_cmp(&dj).then(i.cmp(&j))
    });
    idx.truncate(k);
    idx
}
