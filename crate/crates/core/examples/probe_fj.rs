// Temporary diagnostic: forced-jump estimator quality across thresholds.
use ordered_walks::increments::build_law;
use ordered_walks::rng::RngStream;
use ordered_walks::tail::*;

fn main() {
    let law = build_law(2.5, 0.5, 0.5, 1.0).unwrap();
    let x = [0.0, 1.0, 2.0, 3.0];
    for b in [0.5f64, 0.35, 0.25, 0.15] {
        println!("--- b = {b}");
        let policy = ForcedJumpPolicy { jump_scale_b: b, ..ForcedJumpPolicy::for_law(&law) };
        for (n, samples) in [(16u64, 2_000_000u64), (64, 2_000_000), (512, 2_000_000)] {
            match estimate_survival(&x, &law, n, Method::ForcedJump, &policy, samples,
                RngStream::named(11, "probe-fj").substream(n * 10 + (b * 100.0) as u64)) {
                Ok(fj) => println!(
                    "n={n:4}: p={:.4e} +- {:.2e} (rel {:.3}) ess_pos {:>8.0} ess_all {:.2e} max_w {:.2}",
                    fj.est.value, fj.est.stderr, fj.est.stderr / fj.est.value,
                    fj.ess_positive, fj.ess_all, fj.max_weight),
                Err(e) => println!("n={n:4}: {e}"),
            }
        }
    }
}
