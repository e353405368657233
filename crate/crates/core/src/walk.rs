//! The k-dimensional walk, chamber exit times and direct survival
//! Monte Carlo.
//!
//! Exit detection is exact: time is discrete and each step checks the
//! selected coordinates for strict order. Full, lower (drop top walk) and
//! upper (drop bottom walk) exit times can be measured on one shared
//! increment stream, which is what the coupling-style tests rely on.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::in_chamber;
use crate::increments::IncrementLaw;
use crate::rng::{run_chunked, RngStream, DEFAULT_CHUNKS};
use crate::stats::McEstimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("start not strictly ordered on the selected coordinates")]
    StartNotOrdered,
    #[error("horizon grid must be strictly increasing")]
    BadGrid,
}

/// Which coordinates the exit time watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubWalkSelector {
    /// Coordinates 1..k-1 (the walk without its top coordinate).
    Lower,
    /// Coordinates 2..k (the walk without its bottom coordinate).
    Upper,
    /// All k coordinates.
    Full,
}

impl SubWalkSelector {
    /// Index range of the selected coordinates.
    pub fn bounds(self, k: usize) -> (usize, usize) {
        match self {
            SubWalkSelector::Lower => (0, k - 1),
            SubWalkSelector::Upper => (1, k),
            SubWalkSelector::Full => (0, k),
        }
    }
}

/// Exit time capped at a horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitOutcome {
    /// First step index (1-based) at which the selected coordinates left
    /// strict order.
    Exited(u64),
    /// No exit up to and including the horizon.
    Survived,
}

impl ExitOutcome {
    pub fn survived(&self) -> bool {
        matches!(self, ExitOutcome::Survived)
    }

    /// Exit time if exited.
    pub fn time(&self) -> Option<u64> {
        match self {
            ExitOutcome::Exited(t) => Some(*t),
            ExitOutcome::Survived => None,
        }
    }
}

/// One simulated path: kept only when a caller explicitly asks for the
/// increment history (memory stays bounded at large sample counts).
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub start: Vec<f64>,
    /// Flattened horizon x k increments, present only on request.
    pub steps: Option<Vec<f64>>,
    pub exit_time: ExitOutcome,
    pub horizon: u64,
}

/// Advance the state by one step: an independent increment per coordinate.
#[inline]
pub fn step<R: RngCore>(state: &mut [f64], law: &IncrementLaw, rng: &mut R) {
    for x in state.iter_mut() {
        *x += law.sample(rng);
    }
}

#[inline]
fn ordered_in(xs: &[f64], lo: usize, hi: usize) -> bool {
    for i in lo + 1..hi {
        if !(xs[i - 1] < xs[i]) {
            return false;
        }
    }
    true
}

/// First exit time of the selected sub-walk, capped at `horizon`, plus the
/// full state at `min(tau, horizon)`.
pub fn exit_time<R: RngCore>(
    x: &[f64],
    law: &IncrementLaw,
    horizon: u64,
    selector: SubWalkSelector,
    rng: &mut R,
) -> Result<(ExitOutcome, Vec<f64>), WalkError> {
    let (lo, hi) = selector.bounds(x.len());
    if !ordered_in(x, lo, hi) {
        return Err(WalkError::StartNotOrdered);
    }
    let mut state = x.to_vec();
    for m in 1..=horizon {
        step(&mut state, law, rng);
        if !ordered_in(&state, lo, hi) {
            return Ok((ExitOutcome::Exited(m), state));
        }
    }
    Ok((ExitOutcome::Survived, state))
}

/// Exit times of the full walk and both sub-walks measured on one shared
/// increment matrix. The full constraint set contains each sub-constraint
/// set, so `tau <= tau_lower` and `tau <= tau_upper` hold pathwise.
#[derive(Debug, Clone)]
pub struct CoupledExit {
    pub full: ExitOutcome,
    pub lower: ExitOutcome,
    pub upper: ExitOutcome,
    pub final_state: Vec<f64>,
}

pub fn exit_times_coupled<R: RngCore>(
    x: &[f64],
    law: &IncrementLaw,
    horizon: u64,
    rng: &mut R,
) -> Result<CoupledExit, WalkError> {
    if !in_chamber(x) {
        return Err(WalkError::StartNotOrdered);
    }
    let k = x.len();
    let mut state = x.to_vec();
    let mut full = ExitOutcome::Survived;
    let mut lower = ExitOutcome::Survived;
    let mut upper = ExitOutcome::Survived;
    for m in 1..=horizon {
        step(&mut state, law, rng);
        if full.survived() && !ordered_in(&state, 0, k) {
            full = ExitOutcome::Exited(m);
        }
        if lower.survived() && !ordered_in(&state, 0, k - 1) {
            lower = ExitOutcome::Exited(m);
        }
        if upper.survived() && !ordered_in(&state, 1, k) {
            upper = ExitOutcome::Exited(m);
        }
        if !full.survived() && !lower.survived() && !upper.survived() {
            break;
        }
    }
    Ok(CoupledExit {
        full,
        lower,
        upper,
        final_state: state,
    })
}

/// Record a single path including its increments (diagnostic use).
pub fn record_path<R: RngCore>(
    x: &[f64],
    law: &IncrementLaw,
    horizon: u64,
    selector: SubWalkSelector,
    rng: &mut R,
) -> Result<PathRecord, WalkError> {
    let (lo, hi) = selector.bounds(x.len());
    if !ordered_in(x, lo, hi) {
        return Err(WalkError::StartNotOrdered);
    }
    let k = x.len();
    let mut state = x.to_vec();
    let mut steps = Vec::with_capacity((horizon as usize) * k);
    let mut exit = ExitOutcome::Survived;
    for m in 1..=horizon {
        for i in 0..k {
            let dx = law.sample(rng);
            steps.push(dx);
            state[i] += dx;
        }
        if exit.survived() && !ordered_in(&state, lo, hi) {
            exit = ExitOutcome::Exited(m);
            break;
        }
    }
    Ok(PathRecord {
        start: x.to_vec(),
        steps: Some(steps),
        exit_time: exit,
        horizon,
    })
}

/// Unbiased direct Monte Carlo estimate of P(tau > n) with binomial
/// standard error. `n = 0` returns exactly 1: the exit time is at least 1
/// by definition.
pub fn survival_mc(
    x: &[f64],
    law: &IncrementLaw,
    n: u64,
    samples: u64,
    selector: SubWalkSelector,
    stream: RngStream,
) -> Result<McEstimate, WalkError> {
    if n == 0 {
        return Ok(McEstimate::exact(1.0, stream));
    }
    let counts = run_chunked(samples, DEFAULT_CHUNKS, stream, |_, count, sub| {
        let mut rng = sub.rng();
        let mut hits = 0u64;
        let mut state = vec![0.0; x.len()];
        let (lo, hi) = selector.bounds(x.len());
        'path: for _ in 0..count {
            state.copy_from_slice(x);
            for _ in 0..n {
                step(&mut state, law, &mut rng);
                if !ordered_in(&state, lo, hi) {
                    continue 'path;
                }
            }
            hits += 1;
        }
        Result::<u64, WalkError>::Ok(hits)
    });
    let (lo, hi) = selector.bounds(x.len());
    if !ordered_in(x, lo, hi) {
        return Err(WalkError::StartNotOrdered);
    }
    let mut hits = 0u64;
    for c in counts {
        hits += c?;
    }
    Ok(crate::stats::binomial_estimate(hits, samples, stream))
}

/// Survival estimates on a whole horizon grid from shared paths: the exit
/// time is computed once per path and reused for every grid point, so the
/// per-point indicators are nested by construction.
pub fn survival_grid_mc(
    x: &[f64],
    law: &IncrementLaw,
    grid: &[u64],
    samples: u64,
    selector: SubWalkSelector,
    stream: RngStream,
) -> Result<Vec<McEstimate>, WalkError> {
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(WalkError::BadGrid);
    }
    let (lo, hi) = selector.bounds(x.len());
    if !ordered_in(x, lo, hi) {
        return Err(WalkError::StartNotOrdered);
    }
    let max_n = *grid.last().expect("non-empty grid");
    let partials = run_chunked(samples, DEFAULT_CHUNKS, stream, |_, count, sub| {
        let mut rng = sub.rng();
        let mut hits = vec![0u64; grid.len()];
        let mut state = vec![0.0; x.len()];
        for _ in 0..count {
            state.copy_from_slice(x);
            let mut tau: Option<u64> = None;
            for m in 1..=max_n {
                step(&mut state, law, &mut rng);
                if !ordered_in(&state, lo, hi) {
                    tau = Some(m);
                    break;
                }
            }
            for (gi, &g) in grid.iter().enumerate() {
                if tau.map_or(true, |t| t > g) {
                    hits[gi] += 1;
                }
            }
        }
        hits
    });
    let mut hits = vec![0u64; grid.len()];
    for part in partials {
        for (h, p) in hits.iter_mut().zip(part) {
            *h += p;
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| crate::stats::binomial_estimate(h, samples, stream))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::build_law;
    use crate::stats::OnlineStats;

    fn desk_law() -> IncrementLaw {
        build_law(2.5, 0.5, 0.5, 1.0).unwrap()
    }

    /// Bounded symmetric law: pure body, no power tails.
    fn body_law() -> IncrementLaw {
        build_law(2.5, 0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn step_iid_across_coordinates() {
        let law = body_law();
        let mut rng = RngStream::named(3, "walk-step").rng();
        let n = 100_000;
        let mut cross = OnlineStats::default();
        let mut m0 = OnlineStats::default();
        let mut m1 = OnlineStats::default();
        for _ in 0..n {
            let mut s = [0.0, 0.0];
            step(&mut s, &law, &mut rng);
            cross.add(s[0] * s[1]);
            m0.add(s[0]);
            m1.add(s[1]);
        }
        // zero mean drift per coordinate and zero cross-correlation
        let bound = 3.0 / (n as f64).sqrt();
        assert!(m0.mean().abs() < 3.0 * m0.stderr().max(1e-9) + bound * m0.stddev());
        assert!(m1.mean().abs() < 3.0 * m1.stderr().max(1e-9) + bound * m1.stddev());
        assert!(cross.mean().abs() <= 3.0 * cross.stderr());
    }

    #[test]
    fn far_separated_pair_survives_short_horizon() {
        // Bounded increments cannot close a 1e6 gap in 10 steps at all:
        // the exit probability is exactly 0 here, stronger than the
        // maximal-inequality bound this check is modeled on.
        let law = body_law();
        let mut rng = RngStream::named(5, "walk-far").rng();
        for _ in 0..2000 {
            let (out, _) = exit_time(&[0.0, 1e6], &law, 10, SubWalkSelector::Full, &mut rng)
                .unwrap();
            assert!(out.survived());
        }
    }

    #[test]
    fn tight_gap_exits_immediately_half_the_time() {
        // With a vanishing initial gap the first-step difference of two
        // i.i.d. increments is symmetric, so P(tau = 1) >= 1/2.
        let law = desk_law();
        let mut rng = RngStream::named(6, "walk-tight").rng();
        let n = 40_000;
        let mut exits_at_one = 0;
        for _ in 0..n {
            let (out, _) =
                exit_time(&[0.0, 1e-12], &law, 1, SubWalkSelector::Full, &mut rng).unwrap();
            if !out.survived() {
                exits_at_one += 1;
            }
        }
        let frac = exits_at_one as f64 / n as f64;
        assert!(frac > 0.5 - 3.0 * 0.5 / (n as f64).sqrt(), "frac {frac}");
    }

    #[test]
    fn lower_selector_ignores_top_coordinate() {
        let law = desk_law();
        let stream = RngStream::named(7, "walk-lower");
        let x1 = [0.0, 1.0, 2.0, 3.0];
        let x2 = [0.0, 1.0, 2.0, 1e9];
        let mut r1 = stream.rng();
        let mut r2 = stream.rng();
        for _ in 0..200 {
            let (a, _) = exit_time(&x1, &law, 64, SubWalkSelector::Lower, &mut r1).unwrap();
            let (b, _) = exit_time(&x2, &law, 64, SubWalkSelector::Lower, &mut r2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unordered_start_rejected() {
        let law = desk_law();
        let mut rng = RngStream::new(1, 2).rng();
        let err = exit_time(&[1.0, 0.0], &law, 5, SubWalkSelector::Full, &mut rng).unwrap_err();
        assert_eq!(err, WalkError::StartNotOrdered);
        // but a start that is ordered on the selected coordinates is fine
        assert!(exit_time(
            &[0.0, 1.0, 2.0, -50.0],
            &law,
            5,
            SubWalkSelector::Lower,
            &mut rng
        )
        .is_ok());
    }

    #[test]
    fn full_exit_no_later_than_subwalk_exits() {
        let law = desk_law();
        let mut rng = RngStream::named(8, "walk-coupled").rng();
        for _ in 0..3000 {
            let c = exit_times_coupled(&[0.0, 0.7, 1.9, 3.0], &law, 128, &mut rng).unwrap();
            let t_full = c.full.time().unwrap_or(u64::MAX);
            assert!(t_full <= c.lower.time().unwrap_or(u64::MAX));
            assert!(t_full <= c.upper.time().unwrap_or(u64::MAX));
        }
    }

    #[test]
    fn survival_horizon_zero_is_one() {
        let law = desk_law();
        let est = survival_mc(
            &[0.0, 1.0],
            &law,
            0,
            1000,
            SubWalkSelector::Full,
            RngStream::new(1, 0),
        )
        .unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn survival_translation_invariant_bit_exact() {
        let law = desk_law();
        let stream = RngStream::named(10, "walk-transl");
        let a = survival_mc(&[0.0, 1.0, 2.0, 3.0], &law, 32, 20_000, SubWalkSelector::Full, stream)
            .unwrap();
        let b = survival_mc(
            &[100.0, 101.0, 102.0, 103.0],
            &law,
            32,
            20_000,
            SubWalkSelector::Full,
            stream,
        )
        .unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn survival_grid_nested_monotone() {
        let law = desk_law();
        let grid = [25, 50, 100, 200];
        let ests = survival_grid_mc(
            &[0.0, 1.0, 2.0, 3.0],
            &law,
            &grid,
            50_000,
            SubWalkSelector::Full,
            RngStream::named(11, "walk-grid"),
        )
        .unwrap();
        // shared paths make the counts exactly nested
        for w in ests.windows(2) {
            assert!(w[1].value <= w[0].value + 1e-15);
        }
    }

    #[test]
    fn two_walk_survival_matches_half_exponent() {
        // Classical fluctuation-theory rate for the difference walk:
        // P(tau > n) ~ c n^{-1/2}. Fit c at n = 25 and check n = 100
        // within 30%.
        let law = body_law();
        let grid = [25, 100];
        let ests = survival_grid_mc(
            &[0.0, 1.0],
            &law,
            &grid,
            200_000,
            SubWalkSelector::Full,
            RngStream::named(12, "walk-half"),
        )
        .unwrap();
        let c = ests[0].value * (25.0f64).sqrt();
        let predict = c / (100.0f64).sqrt();
        assert!(
            (ests[1].value - predict).abs() / predict < 0.3,
            "got {} predicted {}",
            ests[1].value,
            predict
        );
    }

    #[test]
    fn degenerate_of_grid_errors() {
        let law = desk_law();
        assert!(survival_grid_mc(
            &[0.0, 1.0],
            &law,
            &[10, 10],
            100,
            SubWalkSelector::Full,
            RngStream::new(1, 0),
        )
        .is_err());
    }
}
