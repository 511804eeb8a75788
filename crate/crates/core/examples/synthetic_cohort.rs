//! Generates the synthetic CN/MCI/AD cohort and summarizes ROI thickness
//! per group, inside and outside the atrophy regions.
//!
//! ```text
//! cargo run --release --example synthetic_cohort -- /tmp/cohort
//! ```

use icodiff::config::RunConfig;
use icodiff::dataset::{Dataset, Group, Split};
use icodiff::pipeline::thickness_rois;
use icodiff::synth::gen_cohort;

fn main() -> icodiff::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("icodiff-cohort"));
    let cfg = RunConfig::desk().cohort;
    let summary = gen_cohort(&cfg, &dir)?;
    println!("{} subjects in {}", summary.subjects, dir.display());

    let ds = Dataset::open(&dir)?;
    let atrophy = &cfg.atrophy_rois;
    for (group, split) in [
        (Group::Cn, Split::Train),
        (Group::Cn, Split::Test),
        (Group::Mci, Split::Test),
        (Group::Ad, Split::Test),
    ] {
        let subjects = ds.select(group, split);
        let (mut inside, mut outside) = (0.0, 0.0);
        for s in &subjects {
            let rois = thickness_rois(&ds, &ds.features(&s.id)?)?;
            for (r, v) in rois.iter().enumerate() {
                if atrophy.contains(&r) {
                    inside += v / atrophy.len() as f64;
                } else {
                    outside += v / (rois.len() - atrophy.len()) as f64;
                }
            }
        }
        let n = subjects.len() as f64;
        println!(
            "{:<3} {:<5} n={:<3} thickness in atrophy ROIs {:.3} mm, elsewhere {:.3} mm",
            group.to_string(),
            split.to_string(),
            subjects.len(),
            inside / n,
            outside / n
        );
    }
    Ok(())
}
