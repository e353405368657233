//! Dyson Brownian motion: independent Brownian motions with pairwise
//! repulsion `dt / (X_i - X_j)`, kept strictly ordered.
//!
//! Integration is Euler-Maruyama. A step that would cross is retried from
//! the pre-step state as two half steps (recursively), never swapped and
//! continued; if halving reaches a 2^-20 fraction of the base step the
//! path reports `StepSizeUnderflow`, which signals a too-coarse `dt`.
//! From the degenerate zero start the first grid point is seeded at
//! `sqrt(dt)` times the vector of standard-normal order-statistic means,
//! the scale-invariant entrance profile of the diffusive ordering.

use rand::RngCore;

use crate::domain::in_chamber;
use crate::rng::NormalSource;
use crate::stats::{adaptive_simpson, normal_cdf};

use super::BmError;

/// A discretized strictly ordered path.
#[derive(Debug, Clone)]
pub struct DysonPath {
    pub times: Vec<f64>,
    /// Row-major (time x dimension) coordinates.
    pub values: Vec<f64>,
    pub dim: usize,
}

impl DysonPath {
    pub fn at(&self, t_index: usize) -> &[f64] {
        &self.values[t_index * self.dim..(t_index + 1) * self.dim]
    }
}

/// Means of the order statistics of `dim` independent standard normals.
pub fn normal_order_stat_means(dim: usize) -> Vec<f64> {
    use crate::stats::ln_gamma;
    (1..=dim)
        .map(|i| {
            // density of the i-th order statistic:
            // m!/((i-1)!(m-i)!) Phi^{i-1} (1-Phi)^{m-i} phi
            let ln_coef = ln_gamma(dim as f64 + 1.0)
                - ln_gamma(i as f64)
                - ln_gamma((dim - i) as f64 + 1.0);
            let coef = ln_coef.exp();
            let f = |z: f64| {
                let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let big = normal_cdf(z);
                z * coef * big.powi(i as i32 - 1) * (1.0 - big).powi((dim - i) as i32) * phi
            };
            adaptive_simpson(&f, -9.0, 9.0, 1e-10)
        })
        .collect()
}

fn drift(state: &[f64], out: &mut [f64]) {
    let d = state.len();
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            if j != i {
                acc += 1.0 / (state[i] - state[j]);
            }
        }
        out[i] = acc;
    }
}

/// Advance by `dt`, halving recursively on crossings.
fn advance<R: RngCore>(
    state: &mut [f64],
    dt: f64,
    depth: u32,
    normals: &mut NormalSource<R>,
    scratch: &mut [f64],
    proposal: &mut [f64],
) -> Result<(), BmError> {
    if depth > 20 {
        return Err(BmError::StepSizeUnderflow);
    }
    drift(state, scratch);
    let sq = dt.sqrt();
    for i in 0..state.len() {
        proposal[i] = state[i] + scratch[i] * dt + sq * normals.next();
    }
    if in_chamber(proposal) {
        state.copy_from_slice(proposal);
        return Ok(());
    }
    // two half steps with fresh noise, same diffusion law
    let mut half = vec![0.0; state.len()];
    half.copy_from_slice(state);
    let mut p2 = vec![0.0; state.len()];
    advance(&mut half, dt / 2.0, depth + 1, normals, scratch, &mut p2)?;
    advance(&mut half, dt / 2.0, depth + 1, normals, scratch, &mut p2)?;
    state.copy_from_slice(&half);
    Ok(())
}

/// Simulate one path on the grid `0, dt, 2dt, ..., t_end`. `start = None`
/// means the zero start (all coordinates together).
pub fn simulate_dyson<R: RngCore>(
    dim: usize,
    t_end: f64,
    dt: f64,
    start: Option<&[f64]>,
    rng: R,
) -> Result<DysonPath, BmError> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(BmError::BadGrid);
    }
    if let Some(s) = start {
        if dim > 1 && !in_chamber(s) {
            return Err(BmError::StartNotOrdered);
        }
    }
    let steps = (t_end / dt).round() as usize;
    let mut normals = NormalSource::new(rng);
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity((steps + 1) * dim);

    let mut state = vec![0.0; dim];
    match start {
        Some(s) => state.copy_from_slice(s),
        None => {
            // entrance from the degenerate point: first step placed
            // analytically, the grid then starts at dt
            let profile = normal_order_stat_means(dim);
            for i in 0..dim {
                state[i] = dt.sqrt() * profile[i];
            }
        }
    }
    times.push(if start.is_some() { 0.0 } else { dt });
    if start.is_some() {
        values.extend_from_slice(&state);
    } else {
        values.extend_from_slice(&state);
    }

    let mut scratch = vec![0.0; dim];
    let mut proposal = vec![0.0; dim];
    let first = if start.is_some() { 0 } else { 1 };
    for s in first..steps {
        if dim == 1 {
            // plain Brownian motion, no interaction
            state[0] += dt.sqrt() * normals.next();
        } else {
            advance(&mut state, dt, 0, &mut normals, &mut scratch, &mut proposal)?;
        }
        times.push((s + 1) as f64 * dt);
        values.extend_from_slice(&state);
    }
    Ok(DysonPath { times, values, dim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stats::OnlineStats;

    #[test]
    fn order_stat_means_known_values() {
        let m2 = normal_order_stat_means(2);
        let expect = 1.0 / std::f64::consts::PI.sqrt();
        assert!((m2[0] + expect).abs() < 1e-6);
        assert!((m2[1] - expect).abs() < 1e-6);
        let m3 = normal_order_stat_means(3);
        assert!(m3[1].abs() < 1e-8);
        assert!((m3[2] - 0.84628).abs() < 1e-4);
    }

    #[test]
    fn dim_one_is_standard_brownian_motion() {
        let mut s = OnlineStats::default();
        for i in 0..10_000u64 {
            let path = simulate_dyson(
                1,
                1.0,
                1.0 / 64.0,
                Some(&[0.0]),
                RngStream::named(81, "dyson-1d").substream(i).rng(),
            )
            .unwrap();
            let last = path.at(path.times.len() - 1)[0];
            s.add(last * last);
        }
        assert!(
            (s.mean() - 1.0).abs() <= 3.0 * s.stderr(),
            "variance at t=1: {} +- {}",
            s.mean(),
            s.stderr()
        );
    }

    #[test]
    fn paths_stay_ordered_without_underflow() {
        let mut failures = 0u32;
        let n = 2000u64;
        for i in 0..n {
            match simulate_dyson(
                3,
                1.0,
                1.0 / 256.0,
                None,
                RngStream::named(82, "dyson-order").substream(i).rng(),
            ) {
                Ok(path) => {
                    for t in 0..path.times.len() {
                        assert!(in_chamber(path.at(t)), "ordering violated at {t}");
                    }
                }
                Err(BmError::StepSizeUnderflow) => failures += 1,
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        // at most 0.1% of paths may hit the halving floor
        assert!(failures as f64 <= n as f64 * 1e-3, "{failures} underflows");
    }

    #[test]
    fn spread_grows_diffusively() {
        let mut r1 = OnlineStats::default();
        let mut r4 = OnlineStats::default();
        for i in 0..3000u64 {
            let path = simulate_dyson(
                3,
                1.0,
                1.0 / 128.0,
                None,
                RngStream::named(83, "dyson-spread").substream(i).rng(),
            )
            .unwrap();
            let spread_sq = |xs: &[f64]| {
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            };
            let quarter_idx = path.times.len() / 4;
            r1.add(spread_sq(path.at(quarter_idx)));
            r4.add(spread_sq(path.at(path.times.len() - 1)));
        }
        let ratio = r4.mean() / r1.mean();
        assert!(
            (ratio - 4.0).abs() / 4.0 < 0.2,
            "mean square spread ratio t=1 vs t=1/4: {ratio}"
        );
    }

    #[test]
    fn disordered_start_rejected() {
        assert!(matches!(
            simulate_dyson(2, 1.0, 0.01, Some(&[1.0, 0.0]), RngStream::new(1, 1).rng()),
            Err(BmError::StartNotOrdered)
        ));
    }
}
