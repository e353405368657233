//! Parameter validation, chamber geometry and the closed-form survival
//! exponent.
//!
//! The state space is the open cone of strictly increasing coordinate
//! vectors ("ordered" configurations). Ties count as outside: a tie ends
//! the walk exactly like a crossing. All geometry is plain `f64`; Monte
//! Carlo noise dominates rounding at the scales this crate targets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::increments::IncrementLawSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("k = {0} is too small: at least 4 ordered walks are required")]
    KTooSmall(usize),
    #[error("alpha = {alpha} outside the open window ({lo}, {hi})")]
    AlphaOutsideWindow { alpha: f64, lo: f64, hi: f64 },
    #[error("tail weights must satisfy p >= 0, q >= 0, p + q > 0 (got p = {p}, q = {q})")]
    BadTailWeights { p: f64, q: f64 },
    #[error("coordinates not strictly increasing at index {0}")]
    NotOrdered(usize),
    #[error("tail mass (p+q)*body_cut^-alpha = {mass} exceeds 1")]
    TailMassExceedsOne { mass: f64 },
    #[error("zero-mean tilt infeasible: body density would go negative (raise body_cut)")]
    TiltInfeasible,
    #[error("alpha = {0} must exceed 2 for a finite-variance increment law")]
    AlphaTooSmallForLaw(f64),
    #[error("tail threshold {threshold} below body_cut {body_cut}: conditional tail not pure power there")]
    ThresholdBelowCut { threshold: f64, body_cut: f64 },
    #[error("{0}")]
    Other(String),
}

/// Full parameter set of a walk ensemble; governs every simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    /// Number of walks.
    pub k: usize,
    /// Tail index.
    pub alpha: f64,
    /// Right-tail constant.
    pub p: f64,
    /// Left-tail constant.
    pub q: f64,
    /// Increment-law construction parameters.
    pub law: IncrementLawSpec,
}

impl WalkParams {
    pub fn new(k: usize, alpha: f64, p: f64, q: f64, body_cut: f64) -> Self {
        Self {
            k,
            alpha,
            p,
            q,
            law: IncrementLawSpec {
                alpha,
                p,
                q,
                body_cut,
            },
        }
    }
}

/// Check the hypothesis window: k >= 4, alpha strictly inside (k-2, k-1),
/// nonnegative tail constants with p + q > 0.
pub fn validate_params(params: &WalkParams) -> Result<(), DomainError> {
    if params.k < 4 {
        return Err(DomainError::KTooSmall(params.k));
    }
    let lo = (params.k - 2) as f64;
    let hi = (params.k - 1) as f64;
    if !(params.alpha > lo && params.alpha < hi) {
        return Err(DomainError::AlphaOutsideWindow {
            alpha: params.alpha,
            lo,
            hi,
        });
    }
    if params.p < 0.0 || params.q < 0.0 || params.p + params.q <= 0.0 {
        return Err(DomainError::BadTailWeights {
            p: params.p,
            q: params.q,
        });
    }
    Ok(())
}

/// Polynomial decay exponent of the exit-time tail: alpha/2 + (k-1)(k-2)/4.
pub fn theory_exponent(k: usize, alpha: f64) -> f64 {
    alpha / 2.0 + ((k - 1) * (k - 2)) as f64 / 4.0
}

/// True iff the vector is strictly increasing.
pub fn in_chamber(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] < w[1])
}

/// First adjacent index violating strict order, if any.
pub fn first_disorder(x: &[f64]) -> Option<usize> {
    x.windows(2).position(|w| !(w[0] < w[1]))
}

/// Product of all pairwise differences prod_{i<j} (x_j - x_i).
pub fn vandermonde(x: &[f64]) -> f64 {
    let mut prod = 1.0;
    for j in 1..x.len() {
        for i in 0..j {
            prod *= x[j] - x[i];
        }
    }
    prod
}

/// Which (k-1)-subset of coordinates a product or sub-walk refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Coordinates 1..k-1 (drop the top walk).
    Lower,
    /// Coordinates 2..k (drop the bottom walk).
    Upper,
}

/// Shifted gap product prod (1 + |x_j - x_i|) over the chosen (k-1)-subset.
/// Bounds the harmonic function from both sides up to absolute constants.
pub fn delta1(x: &[f64], side: Side) -> f64 {
    let sub = match side {
        Side::Lower => &x[..x.len() - 1],
        Side::Upper => &x[1..],
    };
    delta1_full(sub)
}

/// prod_{i<j} (1 + |x_j - x_i|) over all pairs of the given vector.
pub fn delta1_full(x: &[f64]) -> f64 {
    let mut prod = 1.0;
    for j in 1..x.len() {
        for i in 0..j {
            prod *= 1.0 + (x[j] - x[i]).abs();
        }
    }
    prod
}

/// A point of the open chamber: strictly increasing coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChamberPoint {
    coords: Vec<f64>,
}

impl ChamberPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, DomainError> {
        match first_disorder(&coords) {
            Some(i) => Err(DomainError::NotOrdered(i)),
            None => Ok(Self { coords }),
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn k(&self) -> usize {
        self.coords.len()
    }

    pub fn translated(&self, c: f64) -> Self {
        Self {
            coords: self.coords.iter().map(|x| x + c).collect(),
        }
    }
}

/// Which coordinate, if any, is frozen at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frozen {
    None,
    /// Top coordinate pinned at plus infinity.
    TopPlusInfinity,
    /// Bottom coordinate pinned at minus infinity.
    BottomMinusInfinity,
}

/// A point of the partially compactified chamber: either a full ordered
/// k-vector, or k-1 ordered finite coordinates with one extreme frozen.
/// The frozen coordinate is symbolic, never a float sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactPoint {
    frozen: Frozen,
    finite: Vec<f64>,
}

impl CompactPoint {
    /// Interior point (no frozen coordinate); `finite` must have length k.
    pub fn interior(finite: Vec<f64>) -> Result<Self, DomainError> {
        match first_disorder(&finite) {
            Some(i) => Err(DomainError::NotOrdered(i)),
            None => Ok(Self {
                frozen: Frozen::None,
                finite,
            }),
        }
    }

    /// Point with one frozen extreme; `finite` must have length k-1.
    pub fn frozen(frozen: Frozen, finite: Vec<f64>) -> Result<Self, DomainError> {
        assert!(frozen != Frozen::None, "use CompactPoint::interior");
        match first_disorder(&finite) {
            Some(i) => Err(DomainError::NotOrdered(i)),
            None => Ok(Self { frozen, finite }),
        }
    }

    pub fn frozen_kind(&self) -> Frozen {
        self.frozen
    }

    pub fn finite(&self) -> &[f64] {
        &self.finite
    }

    pub fn is_interior(&self) -> bool {
        self.frozen == Frozen::None
    }

    /// Total dimension k including the frozen coordinate, if any.
    pub fn k(&self) -> usize {
        match self.frozen {
            Frozen::None => self.finite.len(),
            _ => self.finite.len() + 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize, alpha: f64, p: f64, q: f64) -> WalkParams {
        WalkParams::new(k, alpha, p, q, 1.0)
    }

    #[test]
    fn validate_accepts_window() {
        assert!(validate_params(&params(4, 2.5, 0.5, 0.5)).is_ok());
    }

    #[test]
    fn validate_rejects_boundary_alpha() {
        // alpha = k-1 is excluded by the open interval
        let err = validate_params(&params(4, 3.0, 0.5, 0.5)).unwrap_err();
        assert!(matches!(err, DomainError::AlphaOutsideWindow { .. }));
        let err = validate_params(&params(4, 2.0, 0.5, 0.5)).unwrap_err();
        assert!(matches!(err, DomainError::AlphaOutsideWindow { .. }));
    }

    #[test]
    fn validate_rejects_small_k() {
        let err = validate_params(&params(3, 1.5, 0.5, 0.5)).unwrap_err();
        assert!(matches!(err, DomainError::KTooSmall(3)));
    }

    #[test]
    fn validate_rejects_negative_weights() {
        let err = validate_params(&params(4, 2.5, -0.1, 0.5)).unwrap_err();
        assert!(matches!(err, DomainError::BadTailWeights { .. }));
        let err = validate_params(&params(4, 2.5, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, DomainError::BadTailWeights { .. }));
    }

    #[test]
    fn chamber_membership() {
        assert!(in_chamber(&[0.0, 1.0, 2.0, 3.0]));
        assert!(!in_chamber(&[0.0, 0.0, 1.0, 2.0])); // tie exits the open chamber
        assert!(!in_chamber(&[3.0, 1.0, 2.0, 0.0]));
    }

    #[test]
    fn vandermonde_known_values() {
        assert_eq!(vandermonde(&[0.0, 1.0, 2.0]), 2.0);
        assert_eq!(vandermonde(&[0.0, 1.0, 2.0, 3.0]), 12.0);
        assert_eq!(vandermonde(&[1.0, 1.0, 2.0]), 0.0);
    }

    #[test]
    fn delta1_known_values() {
        let x = [0.0, 1.0, 2.0, 100.0];
        assert_eq!(delta1(&x, Side::Lower), 12.0); // (1+1)(1+2)(1+1)
        assert_eq!(delta1(&x, Side::Upper), 19800.0); // (1+1)(1+99)(1+98)
        let z = [0.0, 0.0, 0.0, 0.0];
        assert_eq!(delta1(&z, Side::Lower), 1.0);
        assert_eq!(delta1(&z, Side::Upper), 1.0);
    }

    #[test]
    fn delta1_ignores_excluded_coordinate() {
        let a = [0.0, 1.0, 2.0, 100.0];
        let b = [0.0, 1.0, 2.0, -7.0]; // top differs
        assert_eq!(delta1(&a, Side::Lower), delta1(&b, Side::Lower));
    }

    #[test]
    fn exponent_values() {
        assert_eq!(theory_exponent(4, 2.5), 2.75);
        assert_eq!(theory_exponent(5, 3.5), 4.75);
        // k = 4: exponent - alpha/2 = 1.5 for any alpha (up to rounding)
        for a in [2.1, 2.5, 2.9] {
            assert!((theory_exponent(4, a) - a / 2.0 - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_invariance() {
        let x = [0.3, 1.7, 4.0, 9.5];
        let y: Vec<f64> = x.iter().map(|v| v + 123.25).collect();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1.0);
        assert!(rel(vandermonde(&x), vandermonde(&y)) < 1e-12);
        assert!(rel(delta1(&x, Side::Lower), delta1(&y, Side::Lower)) < 1e-12);
        assert!(rel(delta1(&x, Side::Upper), delta1(&y, Side::Upper)) < 1e-12);
    }

    #[test]
    fn compact_point_shapes() {
        let w1 = CompactPoint::frozen(Frozen::TopPlusInfinity, vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(w1.k(), 4);
        assert!(!w1.is_interior());
        let int = CompactPoint::interior(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(int.k(), 4);
        assert!(CompactPoint::frozen(Frozen::BottomMinusInfinity, vec![1.0, 0.0]).is_err());
    }
}
