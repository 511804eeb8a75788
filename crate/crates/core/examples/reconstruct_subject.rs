//! Partial-noise reconstruction of held-out subjects: noise to t = 500,
//! denoise with the subject's own mask and demographics, and compare the
//! samples with the original maps.
//!
//! Uses the checkpoint and cohort written by `train_denoiser`.
//!
//! ```text
//! cargo run --release --example train_denoiser -- 300 /tmp/model.ickp
//! cargo run --release --example reconstruct_subject -- /tmp/model.ickp 3
//! ```

use icodiff::config::RunConfig;
use icodiff::dataset::{Dataset, Group, Split};
use icodiff::nn::DenoiserParams;
use icodiff::pipeline::{evaluate_with, reconstruct_subject};

fn main() -> icodiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("icodiff-model.ickp"));
    let subjects: usize = args.next().map_or(3, |s| s.parse().expect("subject count"));

    let cfg = RunConfig::desk();
    let ds = Dataset::open(std::env::temp_dir().join("icodiff-train-cohort"))?;
    let params = DenoiserParams::load(&ckpt)?;
    let sched = cfg.noise_schedule()?;
    let chosen: Vec<_> = ds
        .select(Group::Cn, Split::Test)
        .into_iter()
        .take(subjects)
        .collect();

    let report = evaluate_with(&ds, &chosen, |s| {
        let samples = reconstruct_subject(&ds, s, &params, &sched, &cfg.sampler)?;
        println!("{}: {} samples", s.id, samples.len());
        Ok(samples)
    })?;
    print!("{}", report.text());
    Ok(())
}
