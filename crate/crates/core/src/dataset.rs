//! On-disk cohort layout: `manifest.tsv`, `subj_<id>_feat.icsf`,
//! `subj_<id>_mask.icsf` and `atlas.icra`.
//!
//! Feature files hold physical units: channel 0 is cortical thickness in mm,
//! channel 1 the shape index in [-1, 1]. [`Dataset::model_input`] converts
//! to model space.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::atlas::RoiAtlas;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::nn::Conditioning;
use crate::normative::{normalize_age, normalize_thickness_slice};

pub const MANIFEST: &str = "manifest.tsv";
pub const ATLAS: &str = "atlas.icra";
const HEADER: &str = "id\tgroup\tsplit\tage\tgender\tseed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Cn,
    Mci,
    Ad,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Cn => "CN",
            Group::Mci => "MCI",
            Group::Ad => "AD",
        })
    }
}

impl FromStr for Group {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CN" => Ok(Group::Cn),
            "MCI" => Ok(Group::Mci),
            "AD" => Ok(Group::Ad),
            _ => Err(Error::Invalid(format!("unknown group {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Invalid(format!("unknown split {s:?}"))),
        }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectInfo {
    pub id: String,
    pub group: Group,
    pub split: Split,
    pub age: f64,
    pub gender: u8,
    pub seed: u64,
}

impl SubjectInfo {
    pub fn conditioning(&self) -> Result<Conditioning> {
        Conditioning::new(normalize_age(self.age)?, self.gender)
    }

    fn row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.3}\t{}\t{}",
            self.id, self.group, self.split, self.age, self.gender, self.seed
        )
    }
}

pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("subj_{id}_feat.icsf"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("subj_{id}_mask.icsf"))
}

pub fn write_manifest(path: &Path, subjects: &[SubjectInfo]) -> Result<()> {
    let mut text = String::from(HEADER);
    text.push('\n');
    for s in subjects {
        text.push_str(&s.row());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<SubjectInfo>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == HEADER => {}
        _ => return Err(bad(1, format!("expected header {HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| bad(i + 1, format!("bad {what} {s:?}"));
        out.push(SubjectInfo {
            id: f[0].to_string(),
            group: f[1].parse().map_err(|_| num(f[1], "group"))?,
            split: f[2].parse().map_err(|_| num(f[2], "split"))?,
            age: f[3].parse().map_err(|_| num(f[3], "age"))?,
            gender: f[4].parse().map_err(|_| num(f[4], "gender"))?,
            seed: f[5].parse().map_err(|_| num(f[5], "seed"))?,
        });
    }
    Ok(out)
}

/// A cohort directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub subjects: Vec<SubjectInfo>,
    pub atlas: RoiAtlas,
}

/// A subject loaded into model space.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// Channel 0 normalized thickness, channel 1 shape index.
    pub x0: FeatureMap,
    pub mask: FeatureMap,
    pub cond: Conditioning,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let subjects = read_manifest(&dir.join(MANIFEST))?;
        let atlas = RoiAtlas::read(dir.join(ATLAS))?;
        Ok(Dataset {
            dir,
            subjects,
            atlas,
        })
    }

    pub fn order(&self) -> usize {
        self.atlas.order()
    }

    pub fn find(&self, id: &str) -> Result<&SubjectInfo> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Invalid(format!("unknown subject id {id:?}")))
    }

    pub fn select(&self, group: Group, split: Split) -> Vec<&SubjectInfo> {
        self.subjects
            .iter()
            .filter(|s| s.group == group && s.split == split)
            .collect()
    }

    /// Raw features in physical units.
    pub fn features(&self, id: &str) -> Result<FeatureMap> {
        let f = FeatureMap::read(feature_path(&self.dir, id))?;
        self.check_map(&f, id, 2)?;
        Ok(f)
    }

    pub fn mask(&self, id: &str) -> Result<FeatureMap> {
        let m = FeatureMap::read(mask_path(&self.dir, id))?;
        self.check_map(&m, id, 2)?;
        Ok(m)
    }

    fn check_map(&self, m: &FeatureMap, id: &str, channels: usize) -> Result<()> {
        if m.order() != self.order() || m.channels() != channels {
            return Err(Error::Shape(format!(
                "subject {id}: map is order {} with {} channels, expected order {} with {channels}",
                m.order(),
                m.channels(),
                self.order()
            )));
        }
        Ok(())
    }

    pub fn model_input(&self, info: &SubjectInfo) -> Result<ModelInput> {
        Ok(ModelInput {
            x0: to_model_space(&self.features(&info.id)?),
            mask: self.mask(&info.id)?,
            cond: info.conditioning()?,
        })
    }
}

/// Physical features (thickness mm, shape index) to model space.
pub fn to_model_space(features: &FeatureMap) -> FeatureMap {
    let mut x = features.clone();
    normalize_thickness_slice(x.channel_mut(0));
    x.map(|v| v.clamp(-1.0, 1.0))
}

/// Model-space map back to physical units.
pub fn to_physical(x: &FeatureMap) -> FeatureMap {
    let mut out = x.clone();
    crate::normative::denormalize_thickness_slice(out.channel_mut(0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST);
        let rows = vec![
            SubjectInfo {
                id: "cn_train_0000".into(),
                group: Group::Cn,
                split: Split::Train,
                age: 71.25,
                gender: 1,
                seed: 99,
            },
            SubjectInfo {
                id: "ad_test_0003".into(),
                group: Group::Ad,
                split: Split::Test,
                age: 55.0,
                gender: 0,
                seed: u64::MAX,
            },
        ];
        write_manifest(&p, &rows).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), rows);
        fs::write(&p, "id\tgroup\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn model_space_round_trip() {
        let f = FeatureMap::from_fn(1, 2, |c, v| {
            if c == 0 {
                0.5 + (v % 40) as f32 * 0.1
            } else {
                -0.3
            }
        });
        let back = to_physical(&to_model_space(&f));
        for (a, b) in f.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
