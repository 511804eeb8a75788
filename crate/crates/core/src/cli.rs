//! The `icodiff` command line: gen-data → train → reconstruct → score →
//! classify, plus eval and mesh-info.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical fault.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{Dataset, Group, Split, SubjectInfo};
use crate::error::{Error, Result};
use crate::mesh::{build_icosphere, edge_count, face_count};
use crate::nn::DenoiserParams;
use crate::pipeline;
use crate::synth::gen_cohort;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "icodiff",
    version,
    about = "Normative modeling with spherical denoising diffusion"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run config; missing keys come from the `desk` profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output location of the command (directory or file).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-subject work (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic cohort.
    GenData,
    /// Train the denoiser on CN-train subjects.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Replace the mask channels with zeros.
        #[arg(long)]
        no_mask: bool,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch loss log (default: checkpoint path with .log).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write reconstructions for the given subjects (default: all test subjects).
    Reconstruct {
        subjects: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        t_noise: Option<usize>,
        /// Posterior-mean chain without injected noise.
        #[arg(long)]
        deterministic: bool,
    },
    /// Abnormal scores of every test subject.
    Score {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Score against the 10 age-nearest CN-train subjects instead.
        #[arg(long)]
        template_baseline: bool,
    },
    /// k-fold SVM classification of CN vs AD and CN vs MCI score vectors.
    Classify {
        /// Score tables (default: the configured one).
        scores: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// SSIM and MSE of stored reconstructions against the originals.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        /// CN, MCI or AD.
        #[arg(long, default_value = "CN")]
        group: String,
    },
    /// Counts and prefix sizes of an icosphere.
    MeshInfo {
        #[arg(long)]
        order: Option<usize>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

/// Loads the config (or the desk profile) and applies `--seed`.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn or<'a>(flag: &'a Option<PathBuf>, default: &'a Path) -> &'a Path {
    flag.as_deref().unwrap_or(default)
}

/// Runs one command and returns its report text.
pub fn run(cli: &Cli) -> Result<String> {
    let mut cfg = resolve_config(&cli.common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    let dest = cli.common.out.as_ref();
    pool.install(|| match &cli.command {
        Command::GenData => {
            let dir = dest.unwrap_or(&cfg.paths.data);
            let s = gen_cohort(&cfg.cohort, dir)?;
            let [tr, cn, mci, ad] = s.group_sizes;
            Ok(format!(
                    "wrote {} subjects to {} (CN-train {tr}, CN-test {cn}, MCI {mci}, AD {ad}; order {}, seed {})\n",
                    s.subjects,
                    dir.display(),
                    cfg.cohort.order,
                    s.seed
                ),
            )
        }
        Command::Train {
            data,
            no_mask,
            epochs,
            log,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            let ds = Dataset::open(or(data, &cfg.paths.data))?;
            let ckpt = dest.unwrap_or(&cfg.paths.checkpoint).clone();
            let log_path = log.clone().unwrap_or_else(|| ckpt.with_extension("log"));
            if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let mut log_err = None;
            let (mut params, logs) =
                pipeline::train_model(&ds, &cfg.model, &cfg.train, &cfg.noise_schedule()?, *no_mask, |l| {
                    log::info!("epoch {} loss {:.5} ({:.2}s)", l.epoch, l.mean_loss, l.seconds);
                    if let Err(e) = writeln!(log_file, "{}", l.line()) {
                        log_err.get_or_insert(e);
                    }
                })?;
            if let Some(e) = log_err {
                return Err(Error::io(&log_path, e));
            }
            params.meta.insert("seed".into(), cfg.train.seed.to_string());
            params.save(&ckpt)?;
            let first = logs.first().map_or(f64::NAN, |l| l.mean_loss);
            let last = logs.last().map_or(f64::NAN, |l| l.mean_loss);
            Ok(format!(
                    "trained {} epochs: loss {first:.5} -> {last:.5}; checkpoint {}, log {}\n",
                    logs.len(),
                    ckpt.display(),
                    log_path.display()
                ),
            )
        }
        Command::Reconstruct {
            subjects,
            checkpoint,
            data,
            n_samples,
            t_noise,
            deterministic,
        } => {
            if let Some(n) = n_samples {
                cfg.sampler.n_samples = *n;
            }
            if let Some(t) = t_noise {
                cfg.sampler.t_noise = *t;
            }
            if *deterministic {
                cfg.sampler.stochastic = false;
            }
            let sched = cfg.noise_schedule()?;
            cfg.sampler.validate(&sched)?;
            let ds = Dataset::open(or(data, &cfg.paths.data))?;
            let chosen: Vec<&SubjectInfo> = if subjects.is_empty() {
                ds.subjects.iter().filter(|s| s.split == Split::Test).collect()
            } else {
                subjects.iter().map(|id| ds.find(id)).collect::<Result<_>>()?
            };
            let params = DenoiserParams::load(or(checkpoint, &cfg.paths.checkpoint))?;
            let dir = dest.unwrap_or(&cfg.paths.samples);
            chosen.par_iter().try_for_each(|s| {
                let samples = pipeline::reconstruct_subject(&ds, s, &params, &sched, &cfg.sampler)?;
                pipeline::write_samples(dir, &s.id, &samples)?;
                log::info!("{}: {} samples", s.id, samples.len());
                Ok::<_, Error>(())
            })?;
            Ok(format!(
                    "wrote {} samples for each of {} subjects to {}\n",
                    cfg.sampler.n_samples,
                    chosen.len(),
                    dir.display()
                ),
            )
        }
        Command::Score {
            data,
            samples,
            template_baseline,
        } => {
            let ds = Dataset::open(or(data, &cfg.paths.data))?;
            let table = pipeline::score_test_subjects(&ds, or(samples, &cfg.paths.samples), *template_baseline)?;
            let path = dest.unwrap_or(&cfg.paths.scores);
            table.write(path)?;
            let summary = pipeline::group_summary(&ds, &table)?;
            Ok(format!(
                    "scored {} subjects ({} excluded) into {}\n{}",
                    table.rows.len(),
                    table.excluded.len(),
                    path.display(),
                    summary.text()
                ),
            )
        }
        Command::Classify { scores, data, folds } => {
            if let Some(k) = folds {
                cfg.classify.k = *k;
            }
            let ds = Dataset::open(or(data, &cfg.paths.data))?;
            let tables = if scores.is_empty() {
                vec![cfg.paths.scores.clone()]
            } else {
                scores.clone()
            };
            let mut text = String::new();
            for path in &tables {
                let table = pipeline::ScoreTable::read(path)?;
                if table.roi_count() != ds.atlas.roi_count() {
                    return Err(Error::Format {
                        path: path.clone(),
                        reason: format!("{} score columns, atlas has {} ROIs", table.roi_count(), ds.atlas.roi_count()),
                    });
                }
                for g in [Group::Ad, Group::Mci] {
                    let r = pipeline::classify_contrast(&ds, &table, g, &cfg.classify, cfg.seed)?;
                    text.push_str(&format!("{}\tCN-vs-{g}\t{}\n", path.display(), r.summary()));
                }
            }
            if let Some(p) = dest {
                fs::write(p, &text).map_err(|e| Error::io(p, e))?;
            }
            Ok(text)
        }
        Command::Eval { data, samples, group } => {
            let ds = Dataset::open(or(data, &cfg.paths.data))?;
            let g: Group = group.parse()?;
            let subjects = ds.select(g, Split::Test);
            let report = pipeline::evaluate(&ds, &subjects, or(samples, &cfg.paths.samples))?;
            let text = report.text();
            if let Some(p) = dest {
                fs::write(p, &text).map_err(|e| Error::io(p, e))?;
            }
            Ok(text)
        }
        Command::MeshInfo { order } => {
            let k = order.unwrap_or(cfg.model.base_order);
            let mesh = build_icosphere(k)?;
            let pentagons = (0..mesh.vertex_count()).filter(|&v| mesh.degree(v) == 5).count();
            Ok(format!(
                    "order {k}: {} vertices, {} edges, {} faces, {pentagons} pentagons\nprefix counts {:?}\n",
                    mesh.vertex_count(),
                    edge_count(k),
                    face_count(k),
                    mesh.prefix_counts()
                ),
            )
        }
    })
}
