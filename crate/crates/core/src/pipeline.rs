//! Dataset-level steps shared by the command line and the examples:
//! training on CN-train subjects, partial-noise reconstruction, abnormal
//! scoring, reconstruction metrics and classification of score vectors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{to_model_space, to_physical, Dataset, Group, ModelInput, Split, SubjectInfo};
use crate::diffusion::{reconstruct, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::mesh::build_icosphere;
use crate::nn::{DenoiserConfig, DenoiserParams, TrainExample};
use crate::normative::{
    abnormal_score, age_nearest, kfold_cv, mean_var, mse, roi_means_of, welch_p_value,
    AbnormalScores, ClassifierReport, KFoldConfig, SsimWindows,
};
use crate::train::{train, EpochLog, TrainConfig};

/// Checkpoint metadata key recording the mask ablation.
pub const META_NO_MASK: &str = "no_mask";
/// Reference subjects per test subject for the template baseline.
pub const TEMPLATE_SIZE: usize = 10;

/// Loads every CN-train subject in model space.
pub fn training_inputs(ds: &Dataset) -> Result<Vec<ModelInput>> {
    let subjects = ds.select(Group::Cn, Split::Train);
    if subjects.is_empty() {
        return Err(Error::Invalid(format!(
            "{} has no CN train subjects",
            ds.dir.display()
        )));
    }
    subjects.par_iter().map(|s| ds.model_input(s)).collect()
}

/// Initializes and trains a denoiser on the CN-train subjects of `ds`.
/// With `no_mask` the mask channels are replaced by zeros and the
/// checkpoint metadata records it.
pub fn train_model(
    ds: &Dataset,
    model: &DenoiserConfig,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    no_mask: bool,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(DenoiserParams, Vec<EpochLog>)> {
    let model = DenoiserConfig {
        use_mask: model.use_mask && !no_mask,
        ..model.clone()
    };
    if model.base_order != ds.order() {
        return Err(Error::Config(format!(
            "model order {} does not match dataset order {}",
            model.base_order,
            ds.order()
        )));
    }
    let inputs = training_inputs(ds)?;
    let mut params = DenoiserParams::init(&model, cfg.seed)?;
    params
        .meta
        .insert(META_NO_MASK.into(), (!model.use_mask).to_string());
    params
        .meta
        .insert("train_subjects".into(), inputs.len().to_string());
    let data: Vec<TrainExample> = inputs
        .iter()
        .map(|m| TrainExample {
            x0: &m.x0,
            mask: &m.mask,
            cond: m.cond,
        })
        .collect();
    let logs = train(&mut params, &data, sched, cfg, on_epoch)?;
    params.meta.insert("epochs".into(), cfg.epochs.to_string());
    Ok((params, logs))
}

/// `n_samples` reconstructions of one subject, in physical units.
pub fn reconstruct_subject(
    ds: &Dataset,
    info: &SubjectInfo,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
) -> Result<Vec<FeatureMap>> {
    if params.config.base_order != ds.order() {
        return Err(Error::Shape(format!(
            "checkpoint order {} does not match dataset order {}",
            params.config.base_order,
            ds.order()
        )));
    }
    let input = ds.model_input(info)?;
    let cfg = SamplerConfig {
        rng_seed: crate::rng::mix(sampler.rng_seed, info.seed),
        ..sampler.clone()
    };
    let samples = reconstruct(&input.x0, &input.mask, input.cond, params, sched, &cfg)?;
    Ok(samples.iter().map(to_physical).collect())
}

pub fn sample_path(dir: &Path, id: &str, k: usize) -> PathBuf {
    dir.join(format!("{id}_sample_{k:02}.icsf"))
}

pub fn write_samples(dir: &Path, id: &str, samples: &[FeatureMap]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, s) in samples.iter().enumerate() {
        s.write(sample_path(dir, id, k))?;
    }
    Ok(())
}

/// Reads `<id>_sample_00.icsf`, `_01`, ... until the first missing index.
pub fn read_samples(dir: &Path, id: &str) -> Result<Vec<FeatureMap>> {
    let mut out = Vec::new();
    while sample_path(dir, id, out.len()).exists() {
        out.push(FeatureMap::read(sample_path(dir, id, out.len()))?);
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!(
            "no samples for subject {id} in {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Per-ROI mean thickness (channel 0) of a physical-unit map.
pub fn thickness_rois(ds: &Dataset, map: &FeatureMap) -> Result<Vec<f64>> {
    roi_means_of(map, 0, &ds.atlas)
}

/// Abnormal thickness scores of `info` against a reference set of
/// physical-unit maps.
pub fn score_against(
    ds: &Dataset,
    info: &SubjectInfo,
    reference: &[FeatureMap],
) -> Result<AbnormalScores> {
    let subject = thickness_rois(ds, &ds.features(&info.id)?)?;
    let refs = reference
        .iter()
        .map(|m| thickness_rois(ds, m))
        .collect::<Result<Vec<_>>>()?;
    abnormal_score(&info.id, &subject, &refs)
}

/// The `TEMPLATE_SIZE` CN-train subjects closest in age to `info`,
/// excluding `info` itself.
pub fn template_reference(ds: &Dataset, info: &SubjectInfo) -> Result<Vec<FeatureMap>> {
    let pool: Vec<&SubjectInfo> = ds
        .select(Group::Cn, Split::Train)
        .into_iter()
        .filter(|s| s.id != info.id)
        .collect();
    let ages: Vec<f64> = pool.iter().map(|s| s.age).collect();
    age_nearest(&ages, info.age, TEMPLATE_SIZE)
        .into_iter()
        .map(|i| ds.features(&pool[i].id))
        .collect()
}

/// Subjects scored, plus those skipped because their reference set was
/// degenerate.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    pub rows: Vec<AbnormalScores>,
    pub excluded: Vec<(String, String)>,
}

impl ScoreTable {
    pub fn roi_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.scores.len())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("subject_id");
        for i in 0..self.roi_count() {
            write!(s, "\troi_{i}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.subject_id);
            for z in &r.scores {
                write!(s, "\t{z:.6}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty score table".into()))?
            .split('\t')
            .collect();
        if header.first() != Some(&"subject_id")
            || header.len() < 2
            || header[1..]
                .iter()
                .enumerate()
                .any(|(i, h)| *h != format!("roi_{i}"))
        {
            return Err(bad("header must be subject_id, roi_0, roi_1, ...".into()));
        }
        let r = header.len() - 1;
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != r + 1 {
                return Err(bad(format!(
                    "line {}: expected {} fields, found {}",
                    n + 2,
                    r + 1,
                    f.len()
                )));
            }
            let scores = f[1..]
                .iter()
                .map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad(format!("line {}: non-numeric score", n + 2)))?;
            rows.push(AbnormalScores {
                subject_id: f[0].to_string(),
                scores,
            });
        }
        Ok(ScoreTable {
            rows,
            excluded: Vec::new(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}

/// Scores every test subject against its stored reconstructions, or against
/// its age-nearest CN-train subjects when `template` is set.
pub fn score_test_subjects(ds: &Dataset, samples_dir: &Path, template: bool) -> Result<ScoreTable> {
    let subjects: Vec<&SubjectInfo> = ds
        .subjects
        .iter()
        .filter(|s| s.split == Split::Test)
        .collect();
    let results: Vec<Result<AbnormalScores>> = subjects
        .par_iter()
        .map(|s| {
            let reference = if template {
                template_reference(ds, s)?
            } else {
                read_samples(samples_dir, &s.id)?
            };
            score_against(ds, s, &reference)
        })
        .collect();
    let mut table = ScoreTable::default();
    for (s, r) in subjects.iter().zip(results) {
        match r {
            Ok(row) => table.rows.push(row),
            Err(e @ Error::DegenerateReference { .. }) => {
                log::warn!("subject {}: {e}; excluded", s.id);
                table.excluded.push((s.id.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(table)
}

/// Group-level view of a score table: per-subject mean abnormal score and
/// Welch tests of CN against MCI and AD.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    /// (group, subjects, mean, sd) of the per-subject mean score.
    pub groups: Vec<(Group, usize, f64, f64)>,
    pub p_cn_mci: Option<f64>,
    pub p_cn_ad: Option<f64>,
}

impl GroupSummary {
    pub fn text(&self) -> String {
        let mut s = String::new();
        for (g, n, m, sd) in &self.groups {
            writeln!(s, "{g}\tn={n}\tmean_score={m:.4}\tsd={sd:.4}").unwrap();
        }
        let p = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
        writeln!(s, "welch_p CN-vs-MCI\t{}", p(self.p_cn_mci)).unwrap();
        writeln!(s, "welch_p CN-vs-AD\t{}", p(self.p_cn_ad)).unwrap();
        s
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-subject statistic: the mean abnormal score over ROIs.
pub fn subject_means(ds: &Dataset, table: &ScoreTable, group: Group) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for r in &table.rows {
        if ds.find(&r.subject_id)?.group == group {
            out.push(mean(&r.scores));
        }
    }
    Ok(out)
}

pub fn group_summary(ds: &Dataset, table: &ScoreTable) -> Result<GroupSummary> {
    let mut groups = Vec::new();
    let mut by = std::collections::BTreeMap::new();
    for g in [Group::Cn, Group::Mci, Group::Ad] {
        let v = subject_means(ds, table, g)?;
        if !v.is_empty() {
            let (m, var) = mean_var(&v);
            groups.push((g, v.len(), m, var.sqrt()));
        }
        by.insert(g, v);
    }
    let test = |a: &[f64], b: &[f64]| welch_p_value(a, b).ok();
    Ok(GroupSummary {
        groups,
        p_cn_mci: test(&by[&Group::Cn], &by[&Group::Mci]),
        p_cn_ad: test(&by[&Group::Cn], &by[&Group::Ad]),
    })
}

/// k-fold CV of CN (label -1) against `disease` (label +1) on the score
/// vectors in `table`.
pub fn classify_contrast(
    ds: &Dataset,
    table: &ScoreTable,
    disease: Group,
    cfg: &KFoldConfig,
    seed: u64,
) -> Result<ClassifierReport> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in &table.rows {
        let g = ds.find(&r.subject_id)?.group;
        if g == Group::Cn || g == disease {
            x.push(r.scores.clone());
            y.push(if g == disease { 1.0 } else { -1.0 });
        }
    }
    kfold_cv(&x, &y, cfg, seed)
}

/// Mean and standard deviation over subjects of one reconstruction metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(xs: &[f64]) -> Self {
        let (mean, var) = mean_var(xs);
        MeanSd {
            mean,
            sd: var.sqrt(),
        }
    }
}

/// Reconstruction quality in the layout of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub subjects: usize,
    pub si_ssim: MeanSd,
    pub si_mse: MeanSd,
    /// On normalized thickness.
    pub ct_ssim: MeanSd,
    /// In mm².
    pub ct_mse_mm: MeanSd,
}

impl EvalReport {
    pub fn text(&self) -> String {
        format!(
            "subjects\t{}\nSI SSIM\t{:.4} ± {:.4}\nSI MSE\t{:.5} ± {:.5}\nCT SSIM\t{:.4} ± {:.4}\nCT MSE(mm)\t{:.5} ± {:.5}\n",
            self.subjects,
            self.si_ssim.mean,
            self.si_ssim.sd,
            self.si_mse.mean,
            self.si_mse.sd,
            self.ct_ssim.mean,
            self.ct_ssim.sd,
            self.ct_mse_mm.mean,
            self.ct_mse_mm.sd
        )
    }
}

/// Per-subject metrics averaged over its reconstructions:
/// `[si_ssim, si_mse, ct_ssim, ct_mse_mm]`.
pub fn subject_metrics(
    windows: &SsimWindows,
    original: &FeatureMap,
    recons: &[FeatureMap],
) -> Result<[f64; 4]> {
    let orig_model = to_model_space(original);
    let mut acc = [0.0; 4];
    for r in recons {
        original.same_shape(r)?;
        let rm = to_model_space(r);
        let (o_si, r_si) = (orig_model.select(1), rm.select(1));
        let (o_ct, r_ct) = (orig_model.select(0), rm.select(0));
        acc[0] += windows.ssim(&o_si, &r_si, 2.0)?;
        acc[1] += mse(&o_si, &r_si)?;
        acc[2] += windows.ssim(&o_ct, &r_ct, 2.0)?;
        acc[3] += mse(&original.select(0), &r.select(0))?;
    }
    Ok(acc.map(|a| a / recons.len() as f64))
}

/// Compares stored reconstructions against the originals of `subjects`.
pub fn evaluate(ds: &Dataset, subjects: &[&SubjectInfo], recon_dir: &Path) -> Result<EvalReport> {
    evaluate_with(ds, subjects, |s| read_samples(recon_dir, &s.id))
}

/// [`evaluate`] with reconstructions supplied by `recons`.
pub fn evaluate_with(
    ds: &Dataset,
    subjects: &[&SubjectInfo],
    recons: impl Fn(&SubjectInfo) -> Result<Vec<FeatureMap>> + Sync,
) -> Result<EvalReport> {
    if subjects.is_empty() {
        return Err(Error::Invalid("no subjects to evaluate".into()));
    }
    let windows = SsimWindows::new(&build_icosphere(ds.order())?);
    let per: Vec<[f64; 4]> = subjects
        .par_iter()
        .map(|s| subject_metrics(&windows, &ds.features(&s.id)?, &recons(s)?))
        .collect::<Result<_>>()?;
    let col = |i: usize| MeanSd::of(&per.iter().map(|m| m[i]).collect::<Vec<_>>());
    Ok(EvalReport {
        subjects: per.len(),
        si_ssim: col(0),
        si_mse: col(1),
        ct_ssim: col(2),
        ct_mse_mm: col(3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_table_round_trip() {
        let t = ScoreTable {
            rows: vec![
                AbnormalScores {
                    subject_id: "a".into(),
                    scores: vec![0.5, -1.25, 2.0],
                },
                AbnormalScores {
                    subject_id: "b".into(),
                    scores: vec![0.0, 1.0, -3.5],
                },
            ],
            excluded: Vec::new(),
        };
        let back = ScoreTable::from_tsv(&t.to_tsv(), Path::new("x")).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.roi_count(), 3);
        assert!(ScoreTable::from_tsv("id\troi_0\n", Path::new("x")).is_err());
        assert!(ScoreTable::from_tsv("subject_id\troi_0\na\tzz\n", Path::new("x")).is_err());
        assert!(ScoreTable::from_tsv("subject_id\troi_0\na\t1\t2\n", Path::new("x")).is_err());
    }

    #[test]
    fn identical_reconstructions_score_perfectly() {
        let mesh = build_icosphere(2).unwrap();
        let windows = SsimWindows::new(&mesh);
        let f = FeatureMap::from_fn(2, 2, |c, v| {
            if c == 0 {
                1.0 + (v % 7) as f32 * 0.4
            } else {
                ((v % 5) as f32 - 2.0) * 0.3
            }
        });
        let m = subject_metrics(&windows, &f, &[f.clone(), f.clone()]).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-9 && (m[2] - 1.0).abs() < 1e-9);
        assert_eq!((m[1], m[3]), (0.0, 0.0));
    }
}
