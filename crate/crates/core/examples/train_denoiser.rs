//! Trains the desk-scale denoiser on the CN-train subjects of a synthetic
//! cohort and writes a checkpoint.
//!
//! ```text
//! cargo run --release --example train_denoiser -- 100 /tmp/model.ickp
//! ```

use icodiff::config::RunConfig;
use icodiff::dataset::Dataset;
use icodiff::nn::DenoiserParams;
use icodiff::pipeline::train_model;
use icodiff::synth::gen_cohort;

fn main() -> icodiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(100, |s| s.parse().expect("epochs"));
    let out = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("icodiff-model.ickp"));

    let mut cfg = RunConfig::desk();
    cfg.train.epochs = epochs;
    let data = std::env::temp_dir().join("icodiff-train-cohort");
    gen_cohort(&cfg.cohort, &data)?;
    let ds = Dataset::open(&data)?;

    let sched = cfg.noise_schedule()?;
    let (params, logs) = train_model(&ds, &cfg.model, &cfg.train, &sched, false, |l| {
        if l.epoch % 10 == 0 || l.epoch + 1 == epochs {
            println!("{}", l.line());
        }
    })?;
    params.save(&out)?;

    let back = DenoiserParams::load(&out)?;
    println!(
        "{} parameters, loss {:.4} -> {:.4}, saved to {} ({} metadata keys)",
        back.parameter_count(),
        logs[0].mean_loss,
        logs[logs.len() - 1].mean_loss,
        out.display(),
        back.meta.len()
    );
    Ok(())
}
