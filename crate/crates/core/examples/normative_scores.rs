//! Abnormal scores against a reference set. The reference here is the
//! template baseline (the 10 CN-train subjects nearest in age), which needs
//! no trained model; `icodiff score` uses model reconstructions instead.

use icodiff::config::RunConfig;
use icodiff::dataset::{Dataset, Split};
use icodiff::normative::abnormal_score;
use icodiff::pipeline::{
    group_summary, score_against, template_reference, ScoreTable,
};
use icodiff::synth::gen_cohort;

fn main() -> icodiff::Result<()> {
    // A hand example: subject 4 against the reference {1, 2, 3}.
    let z = abnormal_score("demo", &[4.0], &[vec![1.0], vec![2.0], vec![3.0]])?;
    println!("x = 4 against {{1, 2, 3}}: Z = {}", z.scores[0]);

    let cfg = RunConfig::desk().cohort;
    let dir = std::env::temp_dir().join("icodiff-score-cohort");
    gen_cohort(&cfg, &dir)?;
    let ds = Dataset::open(&dir)?;

    let mut table = ScoreTable::default();
    for s in ds.subjects.iter().filter(|s| s.split == Split::Test) {
        table.rows.push(score_against(&ds, s, &template_reference(&ds, s)?)?);
    }
    print!("{}", group_summary(&ds, &table)?.text());

    let worst = table
        .rows
        .iter()
        .max_by(|a, b| {
            let m = |r: &icodiff::normative::AbnormalScores| {
                r.scores.iter().map(|z| z.abs()).sum::<f64>()
            };
            m(a).total_cmp(&m(b))
        })
        .unwrap();
    let top: Vec<String> = worst
        .scores
        .iter()
        .enumerate()
        .filter(|(_, z)| z.abs() > 2.0)
        .map(|(r, z)| format!("roi_{r} {z:+.2}"))
        .collect();
    println!("most abnormal subject {}: {}", worst.subject_id, top.join(", "));
    Ok(())
}
