// Temporary diagnostic: decompose the kernel mass at the desk state.
use ordered_walks::chain::kernel_branch_probs;
use ordered_walks::harmonic::*;
use ordered_walks::increments::build_law;
use ordered_walks::rng::RngStream;

fn main() {
    let law = build_law(2.5, 0.5, 0.5, 1.0).unwrap();
    let cfg = SurrogateConfig {
        v: VCacheConfig {
            axes: vec![0.0, 0.5, 1.25, 2.5, 5.0, 10.0, 20.0, 40.0],
            samples_per_node: 12_000,
            far_min_gap: 35.0,
            spot_checks: 0,
            ..Default::default()
        },
        u: UCacheConfig {
            axes: vec![0.0, 0.7, 1.6, 3.5, 7.0, 14.0, 28.0],
            samples_per_node: 5_000,
            truncation: 512,
        },
        anchor_samples: 60_000,
        anchor_truncation: 96,
    };
    let ctx = HarmonicContext::build(&law, 4, &cfg, RngStream::named(71, "chain-ctx")).unwrap();
    let x = [0.0, 1.0, 2.0, 3.0];
    println!("beta_global = {}", ctx.beta_global);
    println!("v(x) = {}, u_cached(x) = {}, kill = {}", ctx.v(&x), ctx.u(&x), ctx.kill_prob(&x));
    let anchor_series = estimate_u(&x, &law, &ctx.vcache, 512, 400_000,
        RngStream::named(999, "probe-direct"), Some(&SeriesSamplingPolicy::default()), Some(1.25)).unwrap();
    println!("direct series U (beta 1.25, trunc 512) = {} +- {} (tail {})",
        anchor_series.total, anchor_series.total_stderr, anchor_series.tail_bound);
    let probs = kernel_branch_probs(&x, &ctx, 96, 150_000, RngStream::named(72, "chain-mass")).unwrap();
    println!("stay = {} +- {}", probs.stay.value, probs.stay.stderr);
    println!("freeze_top = {} +- {}", probs.freeze_top.value, probs.freeze_top.stderr);
    println!("freeze_bottom = {} +- {}", probs.freeze_bottom.value, probs.freeze_bottom.stderr);
    let (m, se) = probs.mass();
    println!("mass = {m} +- {se}");
    let (r, rse) = probs.series_consistency();
    println!("series A {} +- {} ; B/A = {} +- {}", probs.series_u_a.value, probs.series_u_a.stderr, r, rse);
    // evaluate u along a few nearby states
    for g in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
        let y = [0.0, g, 2.0 * g, 3.0 * g];
        println!("gaps {g}: v = {:.4e}  u = {:.4e}  kill = {:.4}", ctx.v(&y), ctx.u(&y), ctx.kill_prob(&y));
    }
}
