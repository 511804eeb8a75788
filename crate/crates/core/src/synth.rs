//! Deterministic synthetic cohort: folding masks, thickness and shape-index
//! fields with an age trend, and ROI-localized atrophy for MCI/AD.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::{voronoi_atlas, RoiAtlas, DEFAULT_ROI_COUNT};
use crate::dataset::{self, Group, Split, SubjectInfo, ATLAS, MANIFEST};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::mesh::{build_icosphere, Icosphere, MAX_ORDER};
use crate::rng;

/// Number of cosine lobes in the folding field.
pub const LOBES: usize = 16;
/// Seed of the population-level folding pattern shared by all subjects.
const ANATOMY_SEED: u64 = 0x1C05_F3A1;
/// Reference age of the thickness trend.
const AGE_PIVOT: f64 = 70.0;

const LANE_FOLD: u64 = 1;
const LANE_THICKNESS: u64 = 2;
const LANE_SHAPE: u64 = 3;
const LANE_DEMOGRAPHICS: u64 = 4;
const LANE_ATLAS: u64 = 0xA71A5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub order: usize,
    pub roi_count: usize,
    pub n_cn_train: usize,
    pub n_cn_test: usize,
    pub n_mci: usize,
    pub n_ad: usize,
    /// Multiplies every group size (rounded to nearest).
    pub scale: f64,
    pub atrophy_rois: Vec<usize>,
    pub mci_atrophy_mm: f64,
    pub ad_atrophy_mm: f64,
    pub age_min: f64,
    pub age_max: f64,
    /// Thickness change per year of age, in mm.
    pub age_slope_mm: f64,
    pub noise_sd_mm: f64,
    /// Ring radius of the noise smoothing.
    pub smoothness: usize,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            order: 3,
            roi_count: DEFAULT_ROI_COUNT,
            n_cn_train: 400,
            n_cn_test: 82,
            n_mci: 82,
            n_ad: 82,
            scale: 1.0,
            atrophy_rois: vec![0, 1, 2, 3, 4, 5],
            mci_atrophy_mm: 0.25,
            ad_atrophy_mm: 0.5,
            age_min: 55.0,
            age_max: 90.0,
            age_slope_mm: -0.01,
            noise_sd_mm: 0.15,
            smoothness: 2,
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order > MAX_ORDER {
            return Err(Error::Config(format!(
                "order {} exceeds {MAX_ORDER}",
                self.order
            )));
        }
        if self.roi_count == 0 || self.roi_count > crate::mesh::prefix_count(self.order) {
            return Err(Error::Config(format!(
                "roi_count {} does not fit order {}",
                self.roi_count, self.order
            )));
        }
        if let Some(r) = self.atrophy_rois.iter().find(|&&r| r >= self.roi_count) {
            return Err(Error::Config(format!(
                "atrophy ROI {r} outside [0, {})",
                self.roi_count
            )));
        }
        if !(self.mci_atrophy_mm >= 0.0 && self.ad_atrophy_mm >= 0.0) {
            return Err(Error::Config("atrophy magnitudes must be >= 0".into()));
        }
        if !(0.0 <= self.age_min && self.age_min <= self.age_max && self.age_max <= 100.0) {
            return Err(Error::Config(format!(
                "age range [{}, {}] not within [0, 100]",
                self.age_min, self.age_max
            )));
        }
        if !(self.noise_sd_mm >= 0.0 && self.age_slope_mm.is_finite()) {
            return Err(Error::Config(
                "noise_sd_mm must be >= 0 and age_slope_mm finite".into(),
            ));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "scale {} must be positive",
                self.scale
            )));
        }
        Ok(())
    }

    /// Scaled sizes of (CN train, CN test, MCI, AD).
    pub fn group_sizes(&self) -> [usize; 4] {
        [self.n_cn_train, self.n_cn_test, self.n_mci, self.n_ad]
            .map(|n| (n as f64 * self.scale).round() as usize)
    }

    pub fn atrophy_mm(&self, group: Group) -> f64 {
        match group {
            Group::Cn => 0.0,
            Group::Mci => self.mci_atrophy_mm,
            Group::Ad => self.ad_atrophy_mm,
        }
    }

    pub fn atlas_seed(&self) -> u64 {
        rng::mix(self.seed, LANE_ATLAS)
    }
}

struct Lobe {
    pole: [f64; 3],
    freq: f64,
    phase: f64,
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn base_lobes() -> Vec<Lobe> {
    let mut r = rng::stream(ANATOMY_SEED, 0, 0);
    (0..LOBES)
        .map(|_| Lobe {
            pole: unit([
                r.sample(StandardNormal),
                r.sample(StandardNormal),
                r.sample(StandardNormal),
            ]),
            freq: r.gen_range(1.5..4.0),
            phase: r.gen_range(0.0..2.0 * PI),
        })
        .collect()
}

/// Smooth folding field of one subject: the shared lobes with jittered poles
/// and phases.
pub fn fold_field(mesh: &Icosphere, subject_seed: u64) -> Vec<f64> {
    let mut r = rng::stream(subject_seed, LANE_FOLD, 0);
    let lobes: Vec<Lobe> = base_lobes()
        .into_iter()
        .map(|l| {
            let g: [f64; 3] = [
                r.sample(StandardNormal),
                r.sample(StandardNormal),
                r.sample(StandardNormal),
            ];
            let jitter: f64 = r.sample(StandardNormal);
            Lobe {
                pole: unit([
                    l.pole[0] + 0.3 * g[0],
                    l.pole[1] + 0.3 * g[1],
                    l.pole[2] + 0.3 * g[2],
                ]),
                freq: l.freq,
                phase: l.phase + 0.3 * jitter,
            }
        })
        .collect();
    mesh.vertices()
        .iter()
        .map(|x| {
            lobes
                .iter()
                .map(|l| {
                    (l.freq * PI * (l.pole[0] * x[0] + l.pole[1] * x[1] + l.pole[2] * x[2])
                        + l.phase)
                        .cos()
                })
                .sum()
        })
        .collect()
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn one_hot(order: usize, gyral: &[bool]) -> FeatureMap {
    FeatureMap::from_fn(
        order,
        2,
        |c, v| if gyral[v] == (c == 0) { 1.0 } else { 0.0 },
    )
}

/// Gyral/sulcal mask: the folding field thresholded at its median. Channel
/// 0 marks gyri, channel 1 sulci.
pub fn gen_segmentation(mesh: &Icosphere, subject_seed: u64) -> FeatureMap {
    let f = fold_field(mesh, subject_seed);
    let m = median(&f);
    let gyral: Vec<bool> = f.iter().map(|&x| x > m).collect();
    one_hot(mesh.order(), &gyral)
}

/// White noise averaged over `radius`-rings, rescaled to standard deviation
/// `sd`.
pub fn smooth_noise<R: Rng + ?Sized>(
    mesh: &Icosphere,
    radius: usize,
    sd: f64,
    rng: &mut R,
) -> Vec<f64> {
    let white: Vec<f64> = (0..mesh.vertex_count())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let smooth: Vec<f64> = (0..mesh.vertex_count())
        .map(|v| {
            let ring = mesh.k_ring(v, radius);
            ring.iter().map(|&u| white[u as usize]).sum::<f64>() / ring.len() as f64
        })
        .collect();
    let n = smooth.len() as f64;
    let mean = smooth.iter().sum::<f64>() / n;
    let std = (smooth.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return vec![0.0; smooth.len()];
    }
    smooth.iter().map(|x| (x - mean) / std * sd).collect()
}

/// One generated subject in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub group: Group,
    pub age: f64,
    pub gender: u8,
    pub seed: u64,
    /// Channel 0 thickness in mm, channel 1 shape index.
    pub features: FeatureMap,
    pub mask: FeatureMap,
}

pub const THICKNESS_MIN_MM: f64 = 0.5;
pub const THICKNESS_MAX_MM: f64 = 4.5;

/// Thickness 2.5 ± 0.5 mm by fold class, plus the age trend and smooth
/// noise, minus the group's atrophy inside `atrophy_rois`.
pub fn gen_subject(
    mesh: &Icosphere,
    atlas: &RoiAtlas,
    cfg: &CohortConfig,
    group: Group,
    age: f64,
    gender: u8,
    subject_seed: u64,
) -> Result<SubjectRecord> {
    if atlas.order() != mesh.order() {
        return Err(Error::Shape(format!(
            "atlas order {} vs mesh order {}",
            atlas.order(),
            mesh.order()
        )));
    }
    let f = fold_field(mesh, subject_seed);
    let m = median(&f);
    let spread = (f.iter().map(|x| (x - m).powi(2)).sum::<f64>() / f.len() as f64)
        .sqrt()
        .max(1e-12);
    let gyral: Vec<bool> = f.iter().map(|&x| x > m).collect();

    let noise = smooth_noise(
        mesh,
        cfg.smoothness,
        cfg.noise_sd_mm,
        &mut rng::stream(subject_seed, LANE_THICKNESS, 0),
    );
    let mut in_atrophy = vec![false; cfg.roi_count.max(atlas.roi_count())];
    for &r in &cfg.atrophy_rois {
        in_atrophy[r] = true;
    }
    let loss = cfg.atrophy_mm(group);
    let thickness = (0..mesh.vertex_count()).map(|v| {
        let fold = if gyral[v] { 0.5 } else { -0.5 };
        let atrophy = if in_atrophy[atlas.label(v)] {
            loss
        } else {
            0.0
        };
        (2.5 + fold + cfg.age_slope_mm * (age - AGE_PIVOT) + noise[v] - atrophy)
            .clamp(THICKNESS_MIN_MM, THICKNESS_MAX_MM)
    });

    let mut r = rng::stream(subject_seed, LANE_SHAPE, 0);
    let shape: Vec<f64> = f
        .iter()
        .map(|&x| {
            let z: f64 = r.sample(StandardNormal);
            ((1.5 * (x - m) / spread).tanh() + 0.05 * z).clamp(-1.0, 1.0)
        })
        .collect();

    let data: Vec<f32> = thickness.chain(shape).map(|x| x as f32).collect();
    Ok(SubjectRecord {
        group,
        age,
        gender,
        seed: subject_seed,
        features: FeatureMap::new(mesh.order(), 2, data)?,
        mask: one_hot(mesh.order(), &gyral),
    })
}

/// Manifest rows for the cohort described by `cfg`, in file order.
pub fn cohort_subjects(cfg: &CohortConfig) -> Vec<SubjectInfo> {
    let [n_train, n_test, n_mci, n_ad] = cfg.group_sizes();
    let plan = [
        (Group::Cn, Split::Train, n_train),
        (Group::Cn, Split::Test, n_test),
        (Group::Mci, Split::Test, n_mci),
        (Group::Ad, Split::Test, n_ad),
    ];
    let mut out = Vec::new();
    for (group, split, n) in plan {
        for i in 0..n {
            let seed = rng::mix(cfg.seed, out.len() as u64 + 1);
            let mut r = rng::stream(seed, LANE_DEMOGRAPHICS, 0);
            let age = r.gen_range(cfg.age_min..=cfg.age_max);
            out.push(SubjectInfo {
                id: format!("{}_{split}_{i:04}", group.to_string().to_lowercase()),
                group,
                split,
                // Rounded so the manifest text reproduces the generating age.
                age: (age * 1000.0).round() / 1000.0,
                gender: (i % 2) as u8,
                seed,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSummary {
    pub subjects: usize,
    pub group_sizes: [usize; 4],
    pub seed: u64,
}

/// Writes the whole cohort into `dir` (created if missing).
pub fn gen_cohort(cfg: &CohortConfig, dir: impl AsRef<Path>) -> Result<CohortSummary> {
    cfg.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mesh = build_icosphere(cfg.order)?;
    let atlas = voronoi_atlas(&mesh, cfg.roi_count, cfg.atlas_seed())?;
    let subjects = cohort_subjects(cfg);
    subjects.par_iter().try_for_each(|s| -> Result<()> {
        let rec = gen_subject(&mesh, &atlas, cfg, s.group, s.age, s.gender, s.seed)?;
        rec.features.write(dataset::feature_path(dir, &s.id))?;
        rec.mask.write(dataset::mask_path(dir, &s.id))
    })?;
    atlas.write(dir.join(ATLAS))?;
    dataset::write_manifest(&dir.join(MANIFEST), &subjects)?;
    Ok(CohortSummary {
        subjects: subjects.len(),
        group_sizes: cfg.group_sizes(),
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation_is_balanced_one_hot() {
        let mesh = build_icosphere(3).unwrap();
        for seed in 0..5 {
            let m = gen_segmentation(&mesh, seed);
            for v in 0..m.vertex_count() {
                assert_eq!(m.channel(0)[v] + m.channel(1)[v], 1.0);
            }
            let frac = m.channel(0).iter().sum::<f32>() / m.vertex_count() as f32;
            assert!((0.45..=0.55).contains(&frac), "{frac}");
        }
    }

    #[test]
    fn masks_vary_across_subjects() {
        let mesh = build_icosphere(3).unwrap();
        for pair in 0..20u64 {
            let a = gen_segmentation(&mesh, 2 * pair);
            let b = gen_segmentation(&mesh, 2 * pair + 1);
            let diff = a
                .channel(0)
                .iter()
                .zip(b.channel(0))
                .filter(|(x, y)| x != y)
                .count();
            assert!(
                diff as f64 > 0.05 * a.vertex_count() as f64,
                "pair {pair}: {diff}"
            );
        }
    }

    #[test]
    fn group_sizes_scale() {
        let cfg = CohortConfig {
            scale: 0.1,
            ..CohortConfig::default()
        };
        assert_eq!(cfg.group_sizes(), [40, 8, 8, 8]);
        assert!(CohortConfig {
            atrophy_rois: vec![34],
            ..CohortConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn subject_is_deterministic_and_bounded() {
        let mesh = build_icosphere(2).unwrap();
        let atlas = voronoi_atlas(&mesh, 34, 1).unwrap();
        let cfg = CohortConfig::default();
        let a = gen_subject(&mesh, &atlas, &cfg, Group::Ad, 80.0, 1, 5).unwrap();
        assert_eq!(
            a,
            gen_subject(&mesh, &atlas, &cfg, Group::Ad, 80.0, 1, 5).unwrap()
        );
        assert!(a
            .features
            .channel(0)
            .iter()
            .all(|&t| (0.5..=4.5).contains(&t)));
        assert!(a
            .features
            .channel(1)
            .iter()
            .all(|&s| (-1.0..=1.0).contains(&s)));
    }

    #[test]
    fn smooth_noise_has_target_sd() {
        let mesh = build_icosphere(3).unwrap();
        let n = smooth_noise(&mesh, 2, 0.15, &mut rng::stream(3, 0, 0));
        let sd = (n.iter().map(|x| x * x).sum::<f64>() / n.len() as f64).sqrt();
        assert!((sd - 0.15).abs() < 1e-9);
    }
}
