// Temporary diagnostic: print the Green-series term profile at the desk state.
use ordered_walks::harmonic::{estimate_u, VCache, VCacheConfig};
use ordered_walks::increments::build_law;
use ordered_walks::rng::RngStream;

fn main() {
    let law = build_law(2.5, 0.5, 0.5, 1.0).unwrap();
    let cfg = VCacheConfig {
        samples_per_node: 20_000,
        spot_checks: 0,
        ..Default::default()
    };
    let vcache = VCache::build(&law, 3, &cfg, RngStream::named(1, "probe-vc")).unwrap();
    let x = [0.0, 1.0, 2.0, 3.0];
    match estimate_u(&x, &law, &vcache, 256, 4_000_000, RngStream::named(2, "probe-u"), Some(1.25)) {
        Ok(s) => {
            println!("total {} +- {} tail {} frac {}", s.total, s.total_stderr, s.tail_bound, s.tail_fraction);
            for (l, t) in s.terms.iter().enumerate() {
                if l <= 8 || (l % 4 == 0 && l <= 64) || l % 16 == 0 {
                    println!("l={l:3} u={: <12.6} se={:.2e} rel={:.2}", t.value, t.stderr, t.stderr / t.value.max(1e-300));
                }
            }
        }
        Err(e) => println!("error: {e}"),
    }
}
