//! Run configuration: one TOML file covering data generation, model,
//! training, sampling and classification. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{cosine_schedule, NoiseSchedule, SamplerConfig, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::nn::DenoiserConfig;
use crate::normative::KFoldConfig;
use crate::synth::CohortConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub s: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: DEFAULT_STEPS,
            s: 0.008,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub samples: PathBuf,
    pub scores: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data: "run/data".into(),
            checkpoint: "run/model.ickp".into(),
            samples: "run/samples".into(),
            scores: "run/scores.tsv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. Copied into the train, sampler and cohort sections
    /// unless a section sets its own.
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub cohort: CohortConfig,
    pub classify: KFoldConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Order-3 profile sized for a laptop CPU.
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            schedule: ScheduleConfig::default(),
            model: DenoiserConfig::desk(),
            train: TrainConfig {
                epochs: 300,
                batch_size: 8,
                lr0: 2e-3,
                lr_min: 2e-5,
                draws_per_subject: 1,
                seed: 0,
            },
            sampler: SamplerConfig::default(),
            cohort: CohortConfig {
                order: 3,
                n_cn_train: 40,
                n_cn_test: 12,
                n_mci: 12,
                n_ad: 12,
                ..CohortConfig::default()
            },
            classify: KFoldConfig::default(),
            paths: PathsConfig::default(),
        }
    }

    /// Order-6 profile with the full cohort sizes and the reference
    /// optimizer settings.
    pub fn full() -> Self {
        RunConfig {
            model: DenoiserConfig::default(),
            train: TrainConfig::default(),
            cohort: CohortConfig {
                order: 6,
                ..CohortConfig::default()
            },
            ..RunConfig::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "full" => Ok(RunConfig::full()),
            _ => Err(Error::Config(format!(
                "unknown profile {name:?} (expected desk or full)"
            ))),
        }
    }

    /// Parses a config file. Keys in the file override the profile named by
    /// the optional top-level `profile` key (default `desk`).
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut overlay: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = match overlay.remove("profile") {
            None => "desk".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(other) => {
                return Err(Error::Config(format!(
                    "profile must be a string, got {other}"
                )))
            }
        };
        let mut base = toml::Table::try_from(Self::profile(&profile)?).expect("config serializes");
        // A top-level seed reaches every section that does not set its own.
        if let Some(seed) = overlay.get("seed").cloned() {
            for (section, key) in [
                ("train", "seed"),
                ("sampler", "rng_seed"),
                ("cohort", "seed"),
            ] {
                let own = overlay.get(section).and_then(|t| t.get(key)).is_some();
                if let (false, Some(toml::Value::Table(t))) = (own, base.get_mut(section)) {
                    t.insert(key.to_string(), seed.clone());
                }
            }
        }
        merge(&mut base, overlay);
        let cfg: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Propagates the master seed into every section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.sampler.rng_seed = seed;
        self.cohort.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.cohort.validate()?;
        let sched = self.noise_schedule()?;
        self.sampler
            .validate(&sched)
            .map_err(|e| Error::Config(format!("sampler: {e}")))?;
        if self.model.base_order != self.cohort.order {
            return Err(Error::Config(format!(
                "model.base_order {} differs from cohort.order {}",
                self.model.base_order, self.cohort.order
            )));
        }
        if self.classify.k < 2 {
            return Err(Error::Config("classify.k must be at least 2".into()));
        }
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        cosine_schedule(self.schedule.steps, self.schedule.s)
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_round_trip() {
        for cfg in [RunConfig::desk(), RunConfig::full()] {
            cfg.validate().unwrap();
            assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
        assert_eq!(RunConfig::full().train.lr0, 1e-5);
        assert_eq!(RunConfig::full().train.epochs, 1000);
        assert_eq!(RunConfig::desk().sampler.t_noise, 500);
    }

    #[test]
    fn partial_files_use_defaults() {
        let cfg = RunConfig::from_toml("seed = 4\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(
            (
                cfg.seed,
                cfg.train.seed,
                cfg.sampler.rng_seed,
                cfg.cohort.seed
            ),
            (4, 4, 4, 4)
        );
        let own = RunConfig::from_toml("seed = 4\n[cohort]\nseed = 9\n").unwrap();
        assert_eq!((own.train.seed, own.cohort.seed), (4, 9));
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model, DenoiserConfig::desk());
        assert_eq!(cfg.train.lr0, RunConfig::desk().train.lr0);
        let full = RunConfig::from_toml("profile = \"full\"\n[train]\nepochs = 2\n").unwrap();
        assert_eq!((full.train.epochs, full.train.lr0), (2, 1e-5));
        assert!(RunConfig::from_toml("profile = \"huge\"\n").is_err());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("[train]\nepochz = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("epochz"), "{err}");
        assert!(RunConfig::from_toml("[sampler]\nt_noise = 5000\n").is_err());
    }
}
