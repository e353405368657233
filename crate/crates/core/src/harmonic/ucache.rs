//! Lattice surrogate for the Green series.
//!
//! The stored field is `s = ln(U / v)` on the gap lattice of the full
//! k-walk. The ratio `U/v` is the natural cache variable: it equals the
//! reciprocal of the per-step killing probability of the transformed
//! kernel, it is smooth, and far from the boundary it grows like the
//! squared gap scale, i.e. linearly in log-gap coordinates — so the
//! interpolation extends linearly beyond the last lattice cell instead of
//! clamping, and trajectories that wander wide keep a sensible kill rate.
//!
//! Node values come from the ladder-sampled series estimator with the
//! tail exponent pinned by the anchor fit, so every node prices its
//! beyond-truncation mass consistently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::increments::IncrementLaw;
use crate::rng::RngStream;

use super::useries::{estimate_u, SeriesSamplingPolicy};
use super::vcache::{gaps_to_point, GapLattice};
use super::{HarmonicError, VCache};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UCacheConfig {
    pub axes: Vec<f64>,
    pub samples_per_node: u64,
    /// Series truncation per node; the rest is the anchored tail.
    pub truncation: u64,
}

impl Default for UCacheConfig {
    fn default() -> Self {
        Self {
            axes: vec![0.0, 0.5, 1.0, 1.8, 3.0, 5.0, 8.5, 14.0, 24.0, 40.0],
            samples_per_node: 12_000,
            truncation: 768,
        }
    }
}

/// Cached `ln(U/v)` over the gap lattice of the k-coordinate walk.
#[derive(Debug, Clone)]
pub struct UCache {
    pub(crate) k: usize,
    pub(crate) lattice: GapLattice,
    pub(crate) log_ratio: Vec<f64>,
    pub(crate) law_hash: u64,
}

impl UCache {
    pub fn build(
        law: &IncrementLaw,
        k: usize,
        vcache: &VCache,
        cfg: &UCacheConfig,
        tail_beta: f64,
        stream: RngStream,
    ) -> Result<Self, HarmonicError> {
        assert!(k >= 3);
        let lattice = GapLattice::new(cfg.axes.clone(), k - 1);
        let spec = law.spec();
        let (p, q) = (spec.p, spec.q);
        let policy = SeriesSamplingPolicy::default();
        let log_ratio: Vec<f64> = (0..lattice.node_count())
            .into_par_iter()
            .map(|idx| {
                // boundary nodes carry tied coordinates; the series value
                // is continuous there, so estimate at a hair's width inside
                let gaps: Vec<f64> = lattice
                    .node_gaps(idx)
                    .into_iter()
                    .map(|g| g.max(1e-9))
                    .collect();
                let x = gaps_to_point(&gaps);
                let u = estimate_u(
                    &x,
                    law,
                    vcache,
                    cfg.truncation,
                    cfg.samples_per_node,
                    stream,
                    Some(&policy),
                    Some(tail_beta),
                )
                .expect("pinned-tail series estimation cannot trip the fit guard")
                .total;
                let v = p * vcache.eval(&x[..k - 1]) + q * vcache.eval(&x[1..]);
                // U >= v by construction (term zero); noise floor guards the log
                (u.max(v * (1.0 + 1e-9)) / v).ln()
            })
            .collect();
        Ok(Self {
            k,
            lattice,
            log_ratio,
            law_hash: law.law_hash(),
        })
    }

    /// `ln(U/v)` at an ordered k-vector, extrapolated beyond the lattice.
    #[inline]
    pub fn ratio_log(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.k);
        let mut gaps = [0.0f64; 8];
        for i in 0..self.k - 1 {
            gaps[i] = x[i + 1] - x[i];
        }
        self.lattice
            .interpolate(&self.log_ratio, &gaps[..self.k - 1], true)
            .max(0.0)
    }

    /// `U/v` at an ordered k-vector.
    #[inline]
    pub fn ratio_exp(&self, x: &[f64]) -> f64 {
        self.ratio_log(x).exp()
    }

    pub fn axes(&self) -> &[f64] {
        &self.lattice.axes
    }

    pub fn law_hash(&self) -> u64 {
        self.law_hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::{VCache, VCacheConfig};
    use crate::increments::build_law;

    #[test]
    fn cached_ratio_tracks_direct_series() {
        let law = build_law(2.5, 0.5, 0.5, 1.0).unwrap();
        let vcfg = VCacheConfig {
            axes: vec![0.0, 0.5, 1.25, 2.5, 5.0, 10.0, 20.0, 40.0],
            samples_per_node: 10_000,
            far_min_gap: 35.0,
            spot_checks: 0,
            ..Default::default()
        };
        let vcache = VCache::build(&law, 3, &vcfg, RngStream::named(41, "uc-v")).unwrap();
        let ucfg = UCacheConfig {
            axes: vec![0.0, 0.6, 1.4, 3.0, 6.0, 12.0, 24.0],
            samples_per_node: 8_000,
            truncation: 512,
        };
        let ucache =
            UCache::build(&law, 4, &vcache, &ucfg, 1.25, RngStream::named(42, "uc")).unwrap();

        let x = [0.0, 1.0, 2.0, 3.0];
        let direct = estimate_u(
            &x,
            &law,
            &vcache,
            512,
            60_000,
            RngStream::named(43, "uc-direct"),
            Some(&SeriesSamplingPolicy::default()),
            Some(1.25),
        )
        .unwrap();
        let v = 0.5 * vcache.eval(&x[..3]) + 0.5 * vcache.eval(&x[1..]);
        let cached = v * ucache.ratio_exp(&x);
        let rel = (cached - direct.total).abs() / direct.total;
        assert!(
            rel < 0.10,
            "cached U {} vs direct {} (rel {rel})",
            cached,
            direct.total
        );
    }
}
