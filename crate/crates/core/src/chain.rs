//! The conditioned Markov chain on the partially compactified chamber.
//!
//! From an interior state the kernel has three branches: stay inside
//! (transition density reweighted by `U`), freeze the top coordinate at
//! plus infinity (reweighted by `v1` on the lower sub-walk), or freeze the
//! bottom at minus infinity (`v2` on the upper sub-walk). The in-chamber
//! part alone is substochastic — the missing mass `v/U` is exactly the
//! freeze probability — so the chain started inside eventually freezes,
//! and the killed in-chamber chain has the same finite lifetime law by
//! construction. Once frozen, the remaining k-1 coordinates move as the
//! harmonic-transform of the (k-1)-walk and never unfreeze.
//!
//! Destinations are drawn by self-normalized importance resampling over a
//! batch of tilted one-step candidates; no usable upper bound on `U`
//! exists, so rejection is not an option. The resampling bias is O(1/M)
//! and is monitored by a batch-doubling test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{first_disorder, in_chamber, CompactPoint, DomainError, Frozen};
use crate::harmonic::{estimate_u, HarmonicContext, HarmonicError, SeriesSamplingPolicy};
use crate::onestep::{one_step_expectation, TiltPolicy, TiltedProposal};
use crate::rng::{open01, run_chunked, RngStream, DEFAULT_CHUNKS};
use crate::stats::McEstimate;
use rand::RngCore;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("all {m} resampling candidates carried zero weight at state {state:?}; increase the batch size")]
    ResamplingDegenerate { m: usize, state: Vec<f64> },
    #[error(transparent)]
    Harmonic(#[from] HarmonicError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Which kernel branch a step took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    StayW,
    FreezeTop,
    FreezeBottom,
    FrozenTopMove,
    FrozenBottomMove,
}

/// One transition of the chain.
#[derive(Debug, Clone)]
pub struct KernelStep {
    pub from: CompactPoint,
    pub to: CompactPoint,
    pub branch: Branch,
    /// Cached probability of the chosen branch at the source state.
    pub branch_prob_estimate: f64,
}

/// Monte Carlo estimates of the three interior branch probabilities of
/// the kernel the chain actually simulates: each numerator is a one-step
/// expectation of the cached surrogate fields over fresh randomness, the
/// denominator is the cached `U(x)` itself. Their total is the cache's
/// one-step fixed-point defect plus Monte Carlo noise, so the mass test is
/// a real audit of the simulated kernel.
#[derive(Debug, Clone)]
pub struct BranchProbs {
    pub stay: McEstimate,
    pub freeze_top: McEstimate,
    pub freeze_bottom: McEstimate,
    /// Cached denominator U(x).
    pub u_cached: f64,
    /// Independent ladder-sampled series estimates of U(x), reported as a
    /// separate two-estimate consistency diagnostic.
    pub series_u_a: McEstimate,
    pub series_u_b: McEstimate,
}

impl BranchProbs {
    /// Total kernel mass estimate with its joint standard error (the three
    /// numerators come from independent streams).
    pub fn mass(&self) -> (f64, f64) {
        let m = self.stay.value + self.freeze_top.value + self.freeze_bottom.value;
        let se = (self.stay.stderr.powi(2)
            + self.freeze_top.stderr.powi(2)
            + self.freeze_bottom.stderr.powi(2))
        .sqrt();
        (m, se)
    }

    /// Ratio of the two independent series estimates with its stderr.
    pub fn series_consistency(&self) -> (f64, f64) {
        self.series_u_b.ratio(&self.series_u_a)
    }
}

/// Estimate the interior branch probabilities at `x`:
///
/// stay = E[U(x+S(1)); tau > 1] / U(x)
/// freeze_top = p E[v1(x+S(1)); tau^(1) > 1] / U(x)
/// freeze_bottom = q E[v2(x+S(1)); tau^(2) > 1] / U(x)
///
/// with `U`, `v1`, `v2` the cached surrogates and every one-step
/// expectation taken by the tail-tilted operator on its own stream. The
/// freeze numerators reduce to `p v1(x)`, `q v2(x)` when the surrogate is
/// exactly harmonic, so their one-step estimates carry the harmonicity
/// defect into the mass check rather than hiding it.
pub fn kernel_branch_probs(
    x: &[f64],
    ctx: &HarmonicContext,
    truncation: u64,
    samples: u64,
    stream: RngStream,
) -> Result<BranchProbs, ChainError> {
    let law = &ctx.law;
    let spec = law.spec();
    let k = ctx.k;
    let policy = TiltPolicy::for_law(law, (k - 2) as f64);
    let u_cached = ctx.u(x);

    let stay_num = one_step_expectation(
        x,
        law,
        &policy,
        |y| if in_chamber(y) { ctx.u(y) } else { 0.0 },
        samples,
        stream.named_substream("stay"),
    )?;
    let ft_num = if spec.p > 0.0 {
        let est = one_step_expectation(
            &x[..k - 1],
            law,
            &policy,
            |y| {
                if first_disorder(y).is_none() {
                    ctx.vcache.eval(y)
                } else {
                    0.0
                }
            },
            samples,
            stream.named_substream("freeze-top"),
        )?;
        McEstimate::new(spec.p * est.value, spec.p * est.stderr, est.samples, stream)
    } else {
        McEstimate::exact(0.0, stream)
    };
    let fb_num = if spec.q > 0.0 {
        let est = one_step_expectation(
            &x[1..],
            law,
            &policy,
            |y| {
                if first_disorder(y).is_none() {
                    ctx.vcache.eval(y)
                } else {
                    0.0
                }
            },
            samples,
            stream.named_substream("freeze-bottom"),
        )?;
        McEstimate::new(spec.q * est.value, spec.q * est.stderr, est.samples, stream)
    } else {
        McEstimate::exact(0.0, stream)
    };

    // independent series-level diagnostic of the same U(x)
    let series_policy = SeriesSamplingPolicy::default();
    let series_samples = (samples / 4).max(20_000);
    let series_u_a = estimate_u(
        x,
        law,
        &ctx.vcache,
        truncation,
        series_samples,
        stream.named_substream("series-a"),
        Some(&series_policy),
        Some(ctx.beta_global),
    )?
    .total_estimate();
    let series_u_b = estimate_u(
        x,
        law,
        &ctx.vcache,
        truncation,
        series_samples,
        stream.named_substream("series-b"),
        Some(&series_policy),
        Some(ctx.beta_global),
    )?
    .total_estimate();

    Ok(BranchProbs {
        stay: McEstimate::new(
            stay_num.value / u_cached,
            stay_num.stderr / u_cached,
            stay_num.samples,
            stream,
        ),
        freeze_top: McEstimate::new(
            ft_num.value / u_cached,
            ft_num.stderr / u_cached,
            ft_num.samples,
            stream,
        ),
        freeze_bottom: McEstimate::new(
            fb_num.value / u_cached,
            fb_num.stderr / u_cached,
            fb_num.samples,
            stream,
        ),
        u_cached,
        series_u_a,
        series_u_b,
    })
}

/// Cached (fast, surrogate-based) interior branch probabilities used to
/// drive simulation: (stay, freeze_top, freeze_bottom).
pub fn cached_branch_probs(x: &[f64], ctx: &HarmonicContext) -> (f64, f64, f64) {
    let spec = ctx.law.spec();
    let u = ctx.u(x);
    let ft = (spec.p * ctx.v1(x) / u).clamp(0.0, 1.0);
    let fb = (spec.q * ctx.v2(x) / u).clamp(0.0, 1.0);
    let stay = (1.0 - ft - fb).max(0.0);
    (stay, ft, fb)
}

pub(crate) struct StepSampler<'a> {
    pub(crate) ctx: &'a HarmonicContext,
    proposal_full: TiltedProposal<'a>,
    proposal_sub: TiltedProposal<'a>,
    m_batch: usize,
    xi: Vec<f64>,
    candidates: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> StepSampler<'a> {
    pub(crate) fn new(ctx: &'a HarmonicContext, m_batch: usize) -> Result<Self, ChainError> {
        let degree = (ctx.k - 2) as f64;
        let policy = TiltPolicy::for_law(&ctx.law, degree);
        let proposal_full = TiltedProposal::new(&ctx.law, &policy, ctx.k)?;
        let proposal_sub = TiltedProposal::new(&ctx.law, &policy, ctx.k - 1)?;
        Ok(Self {
            ctx,
            proposal_full,
            proposal_sub,
            m_batch,
            xi: vec![0.0; ctx.k],
            candidates: vec![0.0; m_batch * ctx.k],
            weights: vec![0.0; m_batch],
        })
    }

    /// Draw a destination by self-normalized resampling over `m_batch`
    /// tilted candidates weighted by `weight_fn` times the proposal ratio.
    pub(crate) fn snis<R: RngCore, W: Fn(&[f64]) -> f64>(
        &mut self,
        from: &[f64],
        dim: usize,
        weight_fn: W,
        rng: &mut R,
    ) -> Result<Vec<f64>, ChainError> {
        let mut total = 0.0;
        for c in 0..self.m_batch {
            let prop = if dim == self.ctx.k {
                &self.proposal_full
            } else {
                &self.proposal_sub
            };
            let w_tilt = prop.draw(rng, &mut self.xi[..dim]);
            let cand = &mut self.candidates[c * dim..(c + 1) * dim];
            for i in 0..dim {
                cand[i] = from[i] + self.xi[i];
            }
            let w = w_tilt * weight_fn(cand);
            self.weights[c] = w;
            total += w;
        }
        if total <= 0.0 {
            return Err(ChainError::ResamplingDegenerate {
                m: self.m_batch,
                state: from.to_vec(),
            });
        }
        let mut u = open01(rng) * total;
        let mut pick = self.m_batch - 1;
        for c in 0..self.m_batch {
            u -= self.weights[c];
            if u <= 0.0 {
                pick = c;
                break;
            }
        }
        Ok(self.candidates[pick * dim..(pick + 1) * dim].to_vec())
    }

    fn interior_step<R: RngCore>(
        &mut self,
        x: &[f64],
        rng: &mut R,
    ) -> Result<(CompactPoint, Branch, f64), ChainError> {
        let k = self.ctx.k;
        let (stay, ft, fb) = cached_branch_probs(x, self.ctx);
        let u = open01(rng) * (stay + ft + fb);
        if u < stay {
            let ctx = self.ctx;
            let dest = self.snis(x, k, |y| if in_chamber(y) { ctx.u(y) } else { 0.0 }, rng)?;
            Ok((CompactPoint::interior(dest).unwrap(), Branch::StayW, stay))
        } else if u < stay + ft {
            let ctx = self.ctx;
            let dest = self.snis(
                &x[..k - 1],
                k - 1,
                |y| {
                    if first_disorder(y).is_none() {
                        ctx.vcache.eval(y)
                    } else {
                        0.0
                    }
                },
                rng,
            )?;
            Ok((
                CompactPoint::frozen(Frozen::TopPlusInfinity, dest).unwrap(),
                Branch::FreezeTop,
                ft,
            ))
        } else {
            let ctx = self.ctx;
            let dest = self.snis(
                &x[1..],
                k - 1,
                |y| {
                    if first_disorder(y).is_none() {
                        ctx.vcache.eval(y)
                    } else {
                        0.0
                    }
                },
                rng,
            )?;
            Ok((
                CompactPoint::frozen(Frozen::BottomMinusInfinity, dest).unwrap(),
                Branch::FreezeBottom,
                fb,
            ))
        }
    }

    fn frozen_step<R: RngCore>(
        &mut self,
        frozen: Frozen,
        finite: &[f64],
        rng: &mut R,
    ) -> Result<(CompactPoint, Branch, f64), ChainError> {
        let ctx = self.ctx;
        let dest = self.snis(
            finite,
            finite.len(),
            |y| {
                if first_disorder(y).is_none() {
                    ctx.vcache.eval(y)
                } else {
                    0.0
                }
            },
            rng,
        )?;
        let branch = match frozen {
            Frozen::TopPlusInfinity => Branch::FrozenTopMove,
            Frozen::BottomMinusInfinity => Branch::FrozenBottomMove,
            Frozen::None => unreachable!(),
        };
        Ok((CompactPoint::frozen(frozen, dest).unwrap(), branch, 1.0))
    }
}

/// One transition of the conditioned chain from `s`, with the destination
/// drawn over a batch of `m_batch` candidates.
pub fn sample_step<R: RngCore>(
    s: &CompactPoint,
    ctx: &HarmonicContext,
    m_batch: usize,
    rng: &mut R,
) -> Result<KernelStep, ChainError> {
    let mut sampler = StepSampler::new(ctx, m_batch)?;
    sample_step_with(&mut sampler, s, rng)
}

fn sample_step_with<R: RngCore>(
    sampler: &mut StepSampler<'_>,
    s: &CompactPoint,
    rng: &mut R,
) -> Result<KernelStep, ChainError> {
    let (to, branch, prob) = match s.frozen_kind() {
        Frozen::None => sampler.interior_step(s.finite(), rng)?,
        frozen => sampler.frozen_step(frozen, s.finite(), rng)?,
    };
    Ok(KernelStep {
        from: s.clone(),
        to,
        branch,
        branch_prob_estimate: prob,
    })
}

/// A simulated trajectory with its freeze bookkeeping.
#[derive(Debug, Clone)]
pub struct ChainTrajectory {
    pub steps: Vec<KernelStep>,
    /// Step index (1-based) of the freeze event, if one occurred.
    pub freeze_step: Option<u64>,
}

/// Run the chain for a fixed number of steps.
pub fn run_chain(
    s0: &CompactPoint,
    ctx: &HarmonicContext,
    n_steps: u64,
    m_batch: usize,
    stream: RngStream,
) -> Result<ChainTrajectory, ChainError> {
    let mut sampler = StepSampler::new(ctx, m_batch)?;
    let mut rng = stream.rng();
    let mut state = s0.clone();
    let mut steps = Vec::with_capacity(n_steps as usize);
    let mut freeze_step = None;
    for m in 1..=n_steps {
        let step = sample_step_with(&mut sampler, &state, &mut rng)?;
        if matches!(step.branch, Branch::FreezeTop | Branch::FreezeBottom) {
            debug_assert!(freeze_step.is_none(), "strata are absorbing");
            freeze_step = Some(m);
        }
        state = step.to.clone();
        steps.push(step);
    }
    Ok(ChainTrajectory { steps, freeze_step })
}

/// Lifetime of one killed-chain run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifetimeSample {
    /// 1-based index of the step at which the kill fired; equals the cap
    /// when the run was censored.
    pub lifetime: u64,
    pub capped: bool,
}

/// Simulate the killed in-chamber chain: at each step die with probability
/// `v/U` at the current state, otherwise move by the stay-branch kernel.
pub fn killed_chain_lifetime(
    x: &[f64],
    ctx: &HarmonicContext,
    samples: u64,
    cap: u64,
    m_batch: usize,
    stream: RngStream,
) -> Result<Vec<LifetimeSample>, ChainError> {
    if first_disorder(x).is_some() {
        return Err(ChainError::Domain(DomainError::NotOrdered(0)));
    }
    let parts = run_chunked(samples, DEFAULT_CHUNKS, stream, |_, count, sub| {
        let mut rng = sub.rng();
        let mut sampler = StepSampler::new(ctx, m_batch).expect("context validated");
        let mut out = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut state = x.to_vec();
            let mut sample = LifetimeSample {
                lifetime: cap,
                capped: true,
            };
            for m in 1..=cap {
                let kill = ctx.kill_prob(&state);
                if open01(&mut rng) < kill {
                    sample = LifetimeSample {
                        lifetime: m,
                        capped: false,
                    };
                    break;
                }
                let ctx_ref = sampler.ctx;
                match sampler.snis(
                    &state,
                    x.len(),
                    |y| if in_chamber(y) { ctx_ref.u(y) } else { 0.0 },
                    &mut rng,
                ) {
                    Ok(dest) => state = dest,
                    Err(_) => {
                        // batch degenerated deep in the tail; censor the run
                        sample = LifetimeSample {
                            lifetime: m,
                            capped: true,
                        };
                        break;
                    }
                }
            }
            out.push(sample);
        }
        out
    });
    Ok(parts.into_iter().flatten().collect())
}

/// Time to the freeze event of the full chain (capped), for comparison
/// against the killed-chain lifetime law.
pub fn freeze_times(
    x: &[f64],
    ctx: &HarmonicContext,
    samples: u64,
    cap: u64,
    m_batch: usize,
    stream: RngStream,
) -> Result<Vec<LifetimeSample>, ChainError> {
    if first_disorder(x).is_some() {
        return Err(ChainError::Domain(DomainError::NotOrdered(0)));
    }
    let parts = run_chunked(samples, DEFAULT_CHUNKS, stream, |_, count, sub| {
        let mut rng = sub.rng();
        let mut sampler = StepSampler::new(ctx, m_batch).expect("context validated");
        let mut out = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut state = CompactPoint::interior(x.to_vec()).unwrap();
            let mut sample = LifetimeSample {
                lifetime: cap,
                capped: true,
            };
            for m in 1..=cap {
                match sample_step_with(&mut sampler, &state, &mut rng) {
                    Ok(step) => {
                        if matches!(step.branch, Branch::FreezeTop | Branch::FreezeBottom) {
                            sample = LifetimeSample {
                                lifetime: m,
                                capped: false,
                            };
                            break;
                        }
                        state = step.to;
                    }
                    Err(_) => {
                        sample = LifetimeSample {
                            lifetime: m,
                            capped: true,
                        };
                        break;
                    }
                }
            }
            out.push(sample);
        }
        out
    });
    Ok(parts.into_iter().flatten().collect())
}

/// CSV export: one row per step with the frozen coordinate written as the
/// literal tokens +INF / -INF.
pub fn trajectory_csv(traj: &ChainTrajectory, k: usize) -> String {
    let mut out = String::new();
    out.push_str("step,branch");
    for i in 0..k {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (i, step) in traj.steps.iter().enumerate() {
        let branch = match step.branch {
            Branch::StayW => "stay",
            Branch::FreezeTop => "freeze_top",
            Branch::FreezeBottom => "freeze_bottom",
            Branch::FrozenTopMove => "frozen_top_move",
            Branch::FrozenBottomMove => "frozen_bottom_move",
        };
        out.push_str(&format!("{},{}", i + 1, branch));
        match step.to.frozen_kind() {
            Frozen::None => {
                for v in step.to.finite() {
                    out.push_str(&format!(",{v}"));
                }
            }
            Frozen::TopPlusInfinity => {
                for v in step.to.finite() {
                    out.push_str(&format!(",{v}"));
                }
                out.push_str(",+INF");
            }
            Frozen::BottomMinusInfinity => {
                out.push_str(",-INF");
                for v in step.to.finite() {
                    out.push_str(&format!(",{v}"));
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::{SurrogateConfig, UCacheConfig, VCacheConfig};
    use crate::increments::{build_law, IncrementLaw};
    use std::sync::LazyLock;

    fn test_cfg() -> SurrogateConfig {
        SurrogateConfig {
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
        }
    }

    fn desk_law() -> IncrementLaw {
        build_law(2.5, 0.5, 0.5, 1.0).unwrap()
    }

    static CTX: LazyLock<HarmonicContext> = LazyLock::new(|| {
        HarmonicContext::build(&desk_law(), 4, &test_cfg(), RngStream::named(71, "chain-ctx"))
            .unwrap()
    });

    fn desk_x() -> [f64; 4] {
        [0.0, 1.0, 2.0, 3.0]
    }

    #[test]
    fn kernel_mass_sums_to_one() {
        let probs = kernel_branch_probs(
            &desk_x(),
            &CTX,
            96,
            150_000,
            RngStream::named(72, "chain-mass"),
        )
        .unwrap();
        let (mass, se) = probs.mass();
        assert!((mass - 1.0).abs() <= 3.0 * se, "mass {mass} +- {se}");
        // substochastic interior: stay strictly below one
        assert!(
            probs.stay.value < 1.0 - 3.0 * probs.stay.stderr,
            "stay = {} +- {}",
            probs.stay.value,
            probs.stay.stderr
        );
        assert!(probs.freeze_top.value > 0.0 && probs.freeze_bottom.value > 0.0);
    }

    #[test]
    fn one_sided_law_freezes_one_way() {
        let law = build_law(2.5, 0.35, 0.0, 2.0).unwrap();
        let mut cfg = test_cfg();
        cfg.v.samples_per_node = 6_000;
        cfg.u.samples_per_node = 3_000;
        cfg.anchor_samples = 30_000;
        let ctx =
            HarmonicContext::build(&law, 4, &cfg, RngStream::named(73, "chain-oneside")).unwrap();
        let probs = kernel_branch_probs(
            &desk_x(),
            &ctx,
            96,
            40_000,
            RngStream::named(74, "chain-oneside-probs"),
        )
        .unwrap();
        assert_eq!(probs.freeze_bottom.value, 0.0);
        assert!(probs.freeze_top.value > 0.0);
    }

    #[test]
    fn frozen_states_are_absorbing() {
        let s = CompactPoint::frozen(Frozen::TopPlusInfinity, vec![0.0, 1.0, 2.0]).unwrap();
        let mut rng = RngStream::named(75, "chain-absorb").rng();
        for _ in 0..50 {
            let step = sample_step(&s, &CTX, 128, &mut rng).unwrap();
            assert_eq!(step.to.frozen_kind(), Frozen::TopPlusInfinity);
            assert_eq!(step.branch, Branch::FrozenTopMove);
            assert!(in_chamber(step.to.finite()));
        }
    }

    #[test]
    fn trajectories_freeze_at_most_once_and_stay_ordered() {
        let s0 = CompactPoint::interior(desk_x().to_vec()).unwrap();
        for t in 0..12 {
            let traj = run_chain(
                &s0,
                &CTX,
                40,
                256,
                RngStream::named(76, "chain-run").substream(t),
            )
            .unwrap();
            let freezes = traj
                .steps
                .iter()
                .filter(|s| matches!(s.branch, Branch::FreezeTop | Branch::FreezeBottom))
                .count();
            assert!(freezes <= 1);
            for step in &traj.steps {
                assert!(first_disorder(step.to.finite()).is_none());
            }
            // after freezing, the stratum never changes
            if let Some(fs) = traj.freeze_step {
                let kind = traj.steps[fs as usize - 1].to.frozen_kind();
                for step in &traj.steps[fs as usize..] {
                    assert_eq!(step.to.frozen_kind(), kind);
                }
            }
        }
    }

    #[test]
    fn symmetric_configuration_freezes_both_ways_equally() {
        let x = [-1.5, -0.5, 0.5, 1.5];
        let s0 = CompactPoint::interior(x.to_vec()).unwrap();
        let mut top = 0u64;
        let mut bottom = 0u64;
        let n = 600u64;
        for t in 0..n {
            let traj = run_chain(
                &s0,
                &CTX,
                60,
                128,
                RngStream::named(77, "chain-sym").substream(t),
            )
            .unwrap();
            if let Some(fs) = traj.freeze_step {
                match traj.steps[fs as usize - 1].branch {
                    Branch::FreezeTop => top += 1,
                    Branch::FreezeBottom => bottom += 1,
                    _ => unreachable!(),
                }
            }
        }
        let total = (top + bottom) as f64;
        assert!(total > 100.0, "not enough freeze events: {total}");
        let frac = top as f64 / total;
        let se = (0.25 / total).sqrt();
        assert!((frac - 0.5).abs() <= 3.0 * se, "top fraction {frac} +- {se}");
    }

    #[test]
    fn kill_frequency_matches_cached_probability() {
        // bucket visited states by their cached kill probability and
        // compare the empirical kill frequency per bucket
        let x = desk_x();
        let mut rng = RngStream::named(78, "chain-killfreq").rng();
        let mut sampler = StepSampler::new(&CTX, 128).unwrap();
        let mut bucket_hits = [0u64; 4];
        let mut bucket_kills = [0u64; 4];
        let edges = [0.0, 0.1, 0.2, 0.35, 1.0];
        for _ in 0..4000 {
            let mut state = x.to_vec();
            for _ in 0..50 {
                let kill = CTX.kill_prob(&state);
                let b = edges[1..].iter().position(|&e| kill < e).unwrap_or(3);
                bucket_hits[b] += 1;
                let killed = open01(&mut rng) < kill;
                if killed {
                    bucket_kills[b] += 1;
                    break;
                }
                let ctx_ref = sampler.ctx;
                state = match sampler.snis(
                    &state,
                    4,
                    |y| if in_chamber(y) { ctx_ref.u(y) } else { 0.0 },
                    &mut rng,
                ) {
                    Ok(d) => d,
                    Err(_) => break,
                };
            }
        }
        for b in 0..4 {
            if bucket_hits[b] < 400 {
                continue;
            }
            let freq = bucket_kills[b] as f64 / bucket_hits[b] as f64;
            let mid = 0.5 * (edges[b] + edges[b + 1]);
            let half = 0.5 * (edges[b + 1] - edges[b]);
            let se = (freq * (1.0 - freq) / bucket_hits[b] as f64).sqrt();
            assert!(
                (freq - mid).abs() <= half + 3.0 * se,
                "bucket {b}: freq {freq} outside [{}, {}]",
                edges[b],
                edges[b + 1]
            );
        }
    }

    #[test]
    fn resampling_batch_doubling_converges() {
        // destination law must stabilize as the batch doubles; compare the
        // min-gap marginal across M levels
        let x = desk_x();
        let levels = [128usize, 256, 512];
        let mut marginals: Vec<Vec<f64>> = Vec::new();
        for (li, &m) in levels.iter().enumerate() {
            let mut rng = RngStream::named(79, "chain-mdouble")
                .substream(li as u64)
                .rng();
            let mut sampler = StepSampler::new(&CTX, m).unwrap();
            let mut vals = Vec::new();
            for _ in 0..4000 {
                let ctx_ref = sampler.ctx;
                if let Ok(d) = sampler.snis(
                    &x,
                    4,
                    |y| if in_chamber(y) { ctx_ref.u(y) } else { 0.0 },
                    &mut rng,
                ) {
                    let min_gap = d
                        .windows(2)
                        .map(|w| w[1] - w[0])
                        .fold(f64::INFINITY, f64::min);
                    vals.push(min_gap);
                }
            }
            marginals.push(vals);
        }
        let d01 = crate::stats::ks_two_sample(&marginals[0], &marginals[1]);
        let d12 = crate::stats::ks_two_sample(&marginals[1], &marginals[2]);
        // final level agreement within the desk tolerance
        assert!(d12 < 0.05, "KS between last levels {d12}");
        assert!(d12 <= d01 + 0.03, "doubling did not tighten: {d01} -> {d12}");
    }

    #[test]
    fn csv_export_writes_frozen_tokens() {
        let s0 = CompactPoint::interior(desk_x().to_vec()).unwrap();
        let traj = run_chain(&s0, &CTX, 120, 128, RngStream::named(80, "chain-csv")).unwrap();
        let csv = trajectory_csv(&traj, 4);
        assert!(csv.starts_with("step,branch,x0,x1,x2,x3\n"));
        if traj.freeze_step.is_some() {
            assert!(csv.contains("+INF") || csv.contains("-INF"));
        }
    }
}
