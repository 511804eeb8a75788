//! Run configs: the desk and full profiles, partial TOML overlays and
//! seed propagation.

use icodiff::config::RunConfig;

fn main() -> icodiff::Result<()> {
    let text = r#"
profile = "desk"
seed = 7

[train]
epochs = 50

[sampler]
n_samples = 4
"#;
    let cfg = RunConfig::from_toml(text)?;
    println!(
        "epochs {} (lr {:.0e}), sampler {} samples at t={}, seeds train/sampler/cohort {}/{}/{}",
        cfg.train.epochs,
        cfg.train.lr0,
        cfg.sampler.n_samples,
        cfg.sampler.t_noise,
        cfg.train.seed,
        cfg.sampler.rng_seed,
        cfg.cohort.seed
    );

    let full = RunConfig::full();
    println!(
        "full profile: order {}, widths {:?}, {} CN-train subjects, lr {:.0e} for {} epochs",
        full.model.base_order,
        full.model.widths,
        full.cohort.n_cn_train,
        full.train.lr0,
        full.train.epochs
    );

    match RunConfig::from_toml("[train]\nepochz = 3\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("unknown keys are rejected"),
    }

    println!("\n# full desk config\n{}", RunConfig::desk().to_toml());
    Ok(())
}
