//! Monte Carlo estimation of the ordered-walk harmonic function `V`, the
//! superharmonic combination `v = p v1 + q v2`, the Green series `U` and
//! the mixture weights `p(x)`, `q(x)`.
//!
//! `V` has no closed form. It is the limit of the expectation of the
//! Vandermonde product over surviving paths, and because the Vandermonde
//! product is exactly harmonic for the free walk (zero-mean i.i.d.
//! coordinates, enough moments), optional stopping turns that limit into
//! an exit-stopped form
//!
//! `E[D(y + S(n)); tau > n] = D(y) - E[D(y + S(tau)); tau <= n]`
//!
//! which is what [`estimate_v`] samples: each path is simulated only until
//! it exits, and the doubling-horizon stabilization rule watches the
//! cumulative exit correction settle. Estimates on the whole chamber are
//! served by a lattice surrogate ([`VCache`]) because the Green series
//! needs `v` at millions of points.

mod io;
mod tilt;
mod ucache;
mod useries;
mod vcache;

pub use ucache::{UCache, UCacheConfig};
pub use useries::{
    estimate_u, mixture_weights, MixtureWeights, SeriesSamplingPolicy, USeriesEstimate,
};
pub use vcache::{VCache, VCacheConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{first_disorder, vandermonde, DomainError};
use crate::increments::IncrementLaw;
use crate::rng::{run_chunked, RngStream, DEFAULT_CHUNKS};

#[derive(Debug, Error)]
pub enum HarmonicError {
    #[error("martingale estimate did not stabilize by the horizon cap {cap} (last value {last_value} +- {last_stderr})")]
    NonStabilized {
        cap: u64,
        last_value: f64,
        last_stderr: f64,
    },
    #[error("extrapolated series tail is {fraction:.3} of the partial sum (> {limit}); raise the truncation")]
    TailDominates { fraction: f64, limit: f64 },
    #[error("series tail fit failed: {0}")]
    TailFit(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("cache io: {0}")]
    CacheIo(String),
    #[error("cache key mismatch: {0}")]
    CacheKey(String),
}

/// Result of a martingale-limit estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Horizon at which stabilization was declared.
    pub n_used: u64,
    pub samples: u64,
}

/// Doubling-grid stabilization rule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StabilizePolicy {
    pub first_horizon: u64,
    pub cap: u64,
    pub rel_tol: f64,
}

impl Default for StabilizePolicy {
    fn default() -> Self {
        Self {
            first_horizon: 16,
            cap: 1 << 14,
            rel_tol: 0.01,
        }
    }
}

/// Estimate `V(y) = lim_n E[D(y + S(n)); tau_y > n]` for the ordered walk
/// of `y.len()` coordinates, on a doubling horizon grid, stopping when two
/// successive grid values differ by less than
/// `max(rel_tol * value, 3 * stderr of the difference)`.
pub fn estimate_v(
    y: &[f64],
    law: &IncrementLaw,
    policy: &StabilizePolicy,
    samples: u64,
    stream: RngStream,
) -> Result<HarmonicEstimate, HarmonicError> {
    if let Some(i) = first_disorder(y) {
        return Err(HarmonicError::Domain(DomainError::NotOrdered(i)));
    }
    estimate_v_at(
        y,
        law,
        policy,
        Some(&SeriesSamplingPolicy::default()),
        samples,
        stream,
    )
}

/// `v1` and `v2`: the harmonic function of the two (k-1)-coordinate
/// sub-walks, without the `p`, `q` weights.
pub fn v_pair(
    x: &[f64],
    law: &IncrementLaw,
    policy: &StabilizePolicy,
    samples: u64,
    stream: RngStream,
) -> Result<(HarmonicEstimate, HarmonicEstimate), HarmonicError> {
    let k = x.len();
    let v1 = estimate_v(&x[..k - 1], law, policy, samples, stream.named_substream("v1"))?;
    let v2 = estimate_v(&x[1..], law, policy, samples, stream.named_substream("v2"))?;
    Ok((v1, v2))
}

/// Internal variant that tolerates ties in the start vector (lattice nodes
/// sit on the boundary; the exit time still makes sense because the first
/// check happens after the first step).
pub(crate) fn estimate_v_at(
    y: &[f64],
    law: &IncrementLaw,
    policy: &StabilizePolicy,
    sampling: Option<&SeriesSamplingPolicy>,
    samples: u64,
    stream: RngStream,
) -> Result<HarmonicEstimate, HarmonicError> {
    let levels = horizon_levels(policy);
    let n_levels = levels.len();
    let cap = *levels.last().unwrap();
    let m_coords = y.len();
    let tilt = sampling.and_then(|pl| {
        tilt::ExitTilt::new(law, pl, cap, m_coords, tilt::TiltCoords::All)
    });

    #[derive(Clone)]
    struct Buckets {
        sum: Vec<f64>,
        sumsq: Vec<f64>,
        count: Vec<u64>,
    }

    let parts = run_chunked(samples, DEFAULT_CHUNKS, stream, |_, count, sub| {
        let mut rng = sub.rng();
        let mut b = Buckets {
            sum: vec![0.0; n_levels],
            sumsq: vec![0.0; n_levels],
            count: vec![0; n_levels],
        };
        let mut state = vec![0.0; m_coords];
        let mut incs = vec![0.0; m_coords];
        for _ in 0..count {
            state.copy_from_slice(y);
            let plain = match &tilt {
                Some(t) => crate::rng::open01(&mut rng) < t.eps,
                None => true,
            };
            let mut planted = false;
            let mut prefix = 1.0f64;
            let mut rho_sum = 0.0f64;
            let mut tau = 0u64;
            for l in 1..=cap {
                let mut plant: Option<(usize, f64)> = None;
                if let Some(t) = &tilt {
                    if !plain && !planted && crate::rng::open01(&mut rng) < t.hazard(l) {
                        planted = true;
                        plant = Some(t.draw_plant(&mut rng));
                    }
                }
                for (c, inc) in incs.iter_mut().enumerate() {
                    *inc = match plant {
                        Some((jc, jv)) if jc == c => jv,
                        _ => law.sample(&mut rng),
                    };
                    state[c] += *inc;
                }
                if let Some(t) = &tilt {
                    let pi = t.hazard(l);
                    rho_sum += prefix * pi * t.step_ratio(&incs);
                    prefix *= 1.0 - pi;
                }
                if first_disorder(&state).is_some() {
                    tau = l;
                    break;
                }
            }
            if tau > 0 {
                let w = match &tilt {
                    Some(t) => t.weight(rho_sum, prefix),
                    None => 1.0,
                };
                let d = w * vandermonde(&state);
                let level = levels.partition_point(|&h| h < tau);
                b.sum[level] += d;
                b.sumsq[level] += d * d;
                b.count[level] += 1;
            }
        }
        b
    });

    let mut sum = vec![0.0; n_levels];
    let mut sumsq = vec![0.0; n_levels];
    for p in parts {
        for i in 0..n_levels {
            sum[i] += p.sum[i];
            sumsq[i] += p.sumsq[i];
        }
    }

    let n = samples as f64;
    let d0 = vandermonde(y);
    let mut cum = sum[0];
    let mut cumsq = sumsq[0];
    for g in 1..n_levels {
        let value_prev = d0 - cum / n;
        cum += sum[g];
        cumsq += sumsq[g];
        let value = d0 - cum / n;
        let diff = value - value_prev;
        // variance of the bucket-mean difference
        let bucket_mean = sum[g] / n;
        let bucket_var = (sumsq[g] / n - bucket_mean * bucket_mean).max(0.0);
        let se_diff = (bucket_var / n).sqrt();
        if diff.abs() <= (policy.rel_tol * value.abs()).max(3.0 * se_diff) {
            let cm = cum / n;
            let var = (cumsq / n - cm * cm).max(0.0);
            return Ok(HarmonicEstimate {
                value,
                stderr: (var / n).sqrt(),
                n_used: levels[g],
                samples,
            });
        }
    }
    let cm = cum / n;
    let var = (cumsq / n - cm * cm).max(0.0);
    Err(HarmonicError::NonStabilized {
        cap,
        last_value: d0 - cm,
        last_stderr: (var / n).sqrt(),
    })
}

fn horizon_levels(policy: &StabilizePolicy) -> Vec<u64> {
    let mut levels = Vec::new();
    let mut h = policy.first_horizon.max(2);
    while h < policy.cap {
        levels.push(h);
        h *= 2;
    }
    levels.push(policy.cap);
    levels
}

/// Lattice surrogates plus law metadata: everything the conditioned-chain
/// and audit machinery needs to evaluate `v1`, `v2`, `v` and `U` cheaply.
/// Built once (single-writer phase), then read-only and shared.
pub struct HarmonicContext {
    pub law: IncrementLaw,
    pub k: usize,
    pub vcache: VCache,
    pub ucache: UCache,
    /// Tail decay exponent fitted at the anchor state, reused by cache
    /// nodes whose own windows are too thin to fit.
    pub beta_global: f64,
}

/// Configuration for building a [`HarmonicContext`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub v: VCacheConfig,
    pub u: UCacheConfig,
    /// Samples for the anchor-state series fit.
    pub anchor_samples: u64,
    /// Series truncation for the anchor fit.
    pub anchor_truncation: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            v: VCacheConfig::default(),
            u: UCacheConfig::default(),
            anchor_samples: 250_000,
            anchor_truncation: 1024,
        }
    }
}

impl HarmonicContext {
    pub fn build(
        law: &IncrementLaw,
        k: usize,
        cfg: &SurrogateConfig,
        stream: RngStream,
    ) -> Result<Self, HarmonicError> {
        let vcache = VCache::build(law, k - 1, &cfg.v, stream.named_substream("vcache"))?;
        // tail exponent fitted once at a tight anchor state with the
        // ladder sampler, then pinned for every cache node; a failed or
        // boundary fit falls back to the big-jump heuristic value alpha/2
        let anchor: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let policy = SeriesSamplingPolicy::default();
        let beta_global = match estimate_u(
            &anchor,
            law,
            &vcache,
            cfg.anchor_truncation,
            cfg.anchor_samples,
            stream.named_substream("anchor"),
            Some(&policy),
            None,
        ) {
            Ok(series) => series.beta_hat.unwrap_or(law.alpha() / 2.0),
            Err(_) => law.alpha() / 2.0,
        }
        .max(1.05);
        let ucache = UCache::build(
            law,
            k,
            &vcache,
            &cfg.u,
            beta_global,
            stream.named_substream("ucache"),
        )?;
        Ok(Self {
            law: law.clone(),
            k,
            vcache,
            ucache,
            beta_global,
        })
    }

    /// Surrogate for the lower sub-walk harmonic function at a k-vector.
    #[inline]
    pub fn v1(&self, x: &[f64]) -> f64 {
        self.vcache.eval(&x[..x.len() - 1])
    }

    /// Surrogate for the upper sub-walk harmonic function at a k-vector.
    #[inline]
    pub fn v2(&self, x: &[f64]) -> f64 {
        self.vcache.eval(&x[1..])
    }

    /// `v = p v1 + q v2`.
    #[inline]
    pub fn v(&self, x: &[f64]) -> f64 {
        let spec = self.law.spec();
        spec.p * self.v1(x) + spec.q * self.v2(x)
    }

    /// Cached Green-series value `U(x) = v(x) * exp(s(x))`.
    #[inline]
    pub fn u(&self, x: &[f64]) -> f64 {
        self.v(x) * self.ucache.ratio_exp(x)
    }

    /// Per-step killing probability of the transformed kernel, `v/U`.
    #[inline]
    pub fn kill_prob(&self, x: &[f64]) -> f64 {
        (-self.ucache.ratio_log(x)).exp().clamp(0.0, 1.0)
    }
}
