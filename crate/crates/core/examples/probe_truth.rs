// Temporary diagnostic: direct-MC ground truth for P(tau > n) at the desk state.
use ordered_walks::increments::build_law;
use ordered_walks::rng::RngStream;
use ordered_walks::walk::{survival_grid_mc, SubWalkSelector};

fn main() {
    let law = build_law(2.5, 0.5, 0.5, 1.0).unwrap();
    let x = [0.0, 1.0, 2.0, 3.0];
    let grid = [8, 16, 32, 64];
    let ests = survival_grid_mc(
        &x,
        &law,
        &grid,
        40_000_000,
        SubWalkSelector::Full,
        RngStream::named(7777, "truth"),
    )
    .unwrap();
    for (n, e) in grid.iter().zip(&ests) {
        println!("n={n:4} p={:.6e} +- {:.2e}", e.value, e.stderr);
    }
}
