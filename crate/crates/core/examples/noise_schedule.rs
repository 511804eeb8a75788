//! The cosine noise schedule and the v-parameterization identities.

use icodiff::diffusion::{
    cosine_schedule, predict_eps_from_v, predict_x0_from_v_unclamped, q_sample, v_target,
};
use icodiff::{prefix_count, rng, FeatureMap};

fn main() -> icodiff::Result<()> {
    let sched = cosine_schedule(1000, 0.008)?;
    println!("    t      beta   alpha_bar");
    for t in [1, 10, 100, 250, 500, 750, 900, 990, 1000] {
        println!("{t:>5} {:>9.2e} {:>11.3e}", sched.beta(t), sched.alpha_bar(t));
    }

    let n = 2 * prefix_count(2);
    let x0 = FeatureMap::new(2, 2, rng::normal_vec(&mut rng::stream(1, 0, 0), n))?;
    let eps = FeatureMap::new(2, 2, rng::normal_vec(&mut rng::stream(1, 1, 0), n))?;
    let mut worst = 0.0f32;
    for t in 1..=sched.steps() {
        let xt = q_sample(&x0, t, &eps, &sched)?;
        let v = v_target(&x0, &eps, t, &sched)?;
        let back = predict_x0_from_v_unclamped(&xt, &v, t, &sched)?;
        let e = predict_eps_from_v(&xt, &v, t, &sched)?;
        for (a, b) in back.data().iter().zip(x0.data()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in e.data().iter().zip(eps.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    println!("\nv round trip over all 1000 steps: max error {worst:.2e}");
    Ok(())
}
