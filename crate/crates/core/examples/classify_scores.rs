//! Stratified 10-fold linear SVM on 34-ROI score vectors, CN against AD and
//! CN against MCI.

use icodiff::config::RunConfig;
use icodiff::dataset::{Dataset, Group, Split};
use icodiff::normative::KFoldConfig;
use icodiff::pipeline::{classify_contrast, score_against, template_reference, ScoreTable};
use icodiff::synth::gen_cohort;

fn main() -> icodiff::Result<()> {
    let cfg = RunConfig::desk();
    let dir = std::env::temp_dir().join("icodiff-classify-cohort");
    gen_cohort(&cfg.cohort, &dir)?;
    let ds = Dataset::open(&dir)?;

    let mut table = ScoreTable::default();
    for s in ds.subjects.iter().filter(|s| s.split == Split::Test) {
        table.rows.push(score_against(&ds, s, &template_reference(&ds, s)?)?);
    }
    let kfold = KFoldConfig::default();
    for g in [Group::Ad, Group::Mci] {
        let report = classify_contrast(&ds, &table, g, &kfold, cfg.seed)?;
        println!(
            "CN vs {g}: accuracy {:.3}, precision {:.3}, recall {:.3}",
            report.accuracy, report.precision, report.recall
        );
    }
    Ok(())
}
