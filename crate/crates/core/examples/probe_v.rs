// Temporary diagnostic: V-estimator stability across seeds.
use ordered_walks::harmonic::{estimate_v, StabilizePolicy};
use ordered_walks::increments::build_law;
use ordered_walks::rng::RngStream;

fn main() {
    let law = build_law(2.5, 0.5, 0.5, 1.0).unwrap();
    let policy = StabilizePolicy::default();
    for y in [vec![0.0, 1.0, 2.0], vec![0.0, 3.0, 6.0]] {
        println!("y = {y:?}");
        for seed in 0..6u64 {
            let est = estimate_v(&y, &law, &policy, 60_000, RngStream::named(seed, "probe-v"))
                .unwrap();
            println!(
                "  seed {seed}: V = {:>9.4} +- {:.4} (n_used {})",
                est.value, est.stderr, est.n_used
            );
        }
    }
}
