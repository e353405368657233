//! The Green series `U(x) = sum_l E[v(x + S(l)); tau_x > l]` and the
//! mixture weights derived from its side-split numerators.
//!
//! Term zero is exact (`S(0) = 0`, survival vacuous). Later terms come
//! from simulated paths of the full walk, evaluated with the plug-in
//! surrogate for `v`, sharing one simulation across all terms so the
//! per-path series sums carry the right correlations into the total's
//! standard error.
//!
//! Plain path sampling cannot see the far terms: survival to horizon `l`
//! costs one big jump to the `sqrt(l)` scale, and on those rare survivors
//! the surrogate value is huge, so an un-tilted estimator both misses a
//! double-digit percentage of the total and reports untrustworthy error
//! bars. The sampler therefore uses a scale ladder of forced jumps: with
//! probability `1 - defensive` one early increment of an extreme walk is
//! replaced by a tail-conditioned draw beyond `b * sigma * sqrt(h_j)`,
//! with the horizon `h_j` drawn uniformly from a dyadic ladder covering
//! the truncation. The likelihood ratio is exact and bounded below by the
//! defensive mass, every dyadic horizon receives proposal mass, and the
//! weighted per-path contributions of level `j` shrink like a negative
//! power of `h_j`, so the estimator has finite variance uniformly in the
//! truncation.
//!
//! The mass beyond the truncation is extrapolated with a fitted power
//! law; the decay exponent beyond summability is not pinned down
//! analytically, so the fit and its uncertainty are reported with the
//! result.

use serde::{Deserialize, Serialize};

use crate::domain::first_disorder;
use crate::increments::IncrementLaw;
use crate::rng::{open01, run_chunked, RngStream, DEFAULT_CHUNKS};
use crate::stats::{weighted_least_squares, McEstimate};

use super::{HarmonicError, VCache};

/// Largest tolerated ratio of extrapolated tail to partial sum.
pub const TAIL_FRACTION_LIMIT: f64 = 0.20;

/// Forced-jump ladder proposal for series sampling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeriesSamplingPolicy {
    /// Fraction of unmodified paths; bounds the weights by its inverse.
    pub defensive: f64,
    /// Forced jump times are uniform on 1..=jump_time_range.
    pub jump_time_range: u64,
    /// Smallest ladder horizon; levels double until the truncation is
    /// covered.
    pub base_horizon: u64,
    /// Jump threshold at ladder level j: b * sigma * sqrt(h_j).
    pub jump_scale_b: f64,
}

impl Default for SeriesSamplingPolicy {
    fn default() -> Self {
        Self {
            defensive: 0.3,
            jump_time_range: 8,
            base_horizon: 16,
            jump_scale_b: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct USeriesEstimate {
    /// Term `l` = E[v(x + S(l)); tau > l] for l = 0..=truncation.
    pub terms: Vec<McEstimate>,
    /// Raw survivor counts per term (Monte Carlo support diagnostic).
    pub support: Vec<u64>,
    pub truncation: u64,
    /// Extrapolated mass beyond the truncation.
    pub tail_bound: f64,
    pub tail_stderr: f64,
    pub total: f64,
    pub total_stderr: f64,
    /// Fitted decay exponent of the far terms, when a fit was possible.
    pub beta_hat: Option<f64>,
    pub beta_stderr: Option<f64>,
    /// tail_bound / partial sum.
    pub tail_fraction: f64,
    /// p-weighted numerator `p * sum_l E[v1(x+S(l)); tau>l]` including its
    /// share of the tail; `top + bottom = total` exactly.
    pub top_numerator: f64,
    pub bottom_numerator: f64,
    /// Per-path (co)variances of (series sum, top part), for ratio errors.
    var_total: f64,
    var_top: f64,
    cov_total_top: f64,
    samples: u64,
    seed: u64,
    stream_id: u64,
}

struct Accum {
    term_sum: Vec<f64>,
    term_sumsq: Vec<f64>,
    term_sum_top: Vec<f64>,
    alive: Vec<u64>,
    s_t: f64,
    s_tt: f64,
    s_n: f64,
    s_nn: f64,
    s_tn: f64,
}

impl Accum {
    fn new(len: usize) -> Self {
        Self {
            term_sum: vec![0.0; len],
            term_sumsq: vec![0.0; len],
            term_sum_top: vec![0.0; len],
            alive: vec![0; len],
            s_t: 0.0,
            s_tt: 0.0,
            s_n: 0.0,
            s_nn: 0.0,
            s_tn: 0.0,
        }
    }

    fn merge(&mut self, o: &Accum) {
        for i in 0..self.term_sum.len() {
            self.term_sum[i] += o.term_sum[i];
            self.term_sumsq[i] += o.term_sumsq[i];
            self.term_sum_top[i] += o.term_sum_top[i];
            self.alive[i] += o.alive[i];
        }
        self.s_t += o.s_t;
        self.s_tt += o.s_tt;
        self.s_n += o.s_n;
        self.s_nn += o.s_nn;
        self.s_tn += o.s_tn;
    }
}

/// Estimate the Green series at `x`.
///
/// `policy` selects the forced-jump ladder (`None` = plain sampling).
/// `fixed_beta` pins the tail exponent (used by cache builds keyed to an
/// anchor fit); `None` fits it from the far window of measured terms.
#[allow(clippy::too_many_arguments)]
pub fn estimate_u(
    x: &[f64],
    law: &IncrementLaw,
    vcache: &VCache,
    truncation: u64,
    samples: u64,
    stream: RngStream,
    policy: Option<&SeriesSamplingPolicy>,
    fixed_beta: Option<f64>,
) -> Result<USeriesEstimate, HarmonicError> {
    if let Some(i) = first_disorder(x) {
        return Err(HarmonicError::Domain(
            crate::domain::DomainError::NotOrdered(i),
        ));
    }
    if truncation < 1 {
        return Err(HarmonicError::Domain(crate::domain::DomainError::Other(
            "truncation must be at least 1".into(),
        )));
    }
    let spec = law.spec();
    let (p, q) = (spec.p, spec.q);
    let k = x.len();
    let len = truncation as usize + 1;
    let tilt = policy.and_then(|pl| {
        super::tilt::ExitTilt::new(law, pl, truncation, 2, super::tilt::TiltCoords::Extremes)
    });

    let v1_of = |s: &[f64]| vcache.eval(&s[..k - 1]);
    let v2_of = |s: &[f64]| vcache.eval(&s[1..]);

    let parts = run_chunked(samples, DEFAULT_CHUNKS, stream, |_, count, sub| {
        let mut rng = sub.rng();
        let mut acc = Accum::new(len);
        let mut state = vec![0.0; k];
        // extreme-coordinate increments of the current step, for the tilt
        let mut ext = [0.0f64; 2];
        // per-path term buffers, scattered after the weight is known
        let mut vals = vec![0.0f64; len];
        let mut tops = vec![0.0f64; len];
        for _ in 0..count {
            state.copy_from_slice(x);
            let plain = match &tilt {
                Some(t) => open01(&mut rng) < t.eps,
                None => true,
            };
            let mut planted = false;
            let mut prefix = 1.0f64;
            let mut rho_sum = 0.0f64;
            let mut last_alive = 0usize;
            for l in 1..=truncation {
                let mut plant: Option<(usize, f64)> = None;
                if let Some(t) = &tilt {
                    if !plain && !planted && open01(&mut rng) < t.hazard(l) {
                        planted = true;
                        // tilt indices are over the two extremes
                        let (ec, jv) = t.draw_plant(&mut rng);
                        plant = Some((if ec == 0 { 0 } else { k - 1 }, jv));
                    }
                }
                for c in 0..k {
                    let inc = match plant {
                        Some((jc, jv)) if jc == c => jv,
                        _ => law.sample(&mut rng),
                    };
                    state[c] += inc;
                    if c == 0 {
                        ext[0] = inc;
                    } else if c == k - 1 {
                        ext[1] = inc;
                    }
                }
                if let Some(t) = &tilt {
                    let pi = t.hazard(l);
                    rho_sum += prefix * pi * t.step_ratio(&ext);
                    prefix *= 1.0 - pi;
                }
                if first_disorder(&state).is_some() {
                    break;
                }
                let li = l as usize;
                let top = p * v1_of(&state);
                let bot = q * v2_of(&state);
                vals[li] = top + bot;
                tops[li] = top;
                last_alive = li;
            }

            let w = match &tilt {
                Some(t) => t.weight(rho_sum, prefix),
                None => 1.0,
            };
            let mut t_sum = 0.0;
            let mut n_sum = 0.0;
            for li in 1..=last_alive {
                let wv = w * vals[li];
                let wn = w * tops[li];
                acc.term_sum[li] += wv;
                acc.term_sumsq[li] += wv * wv;
                acc.term_sum_top[li] += wn;
                acc.alive[li] += 1;
                t_sum += wv;
                n_sum += wn;
            }
            acc.s_t += t_sum;
            acc.s_tt += t_sum * t_sum;
            acc.s_n += n_sum;
            acc.s_nn += n_sum * n_sum;
            acc.s_tn += t_sum * n_sum;
        }
        acc
    });
    let mut acc = Accum::new(len);
    for part in &parts {
        acc.merge(part);
    }

    let nf = samples as f64;
    let term0_top = p * v1_of(x);
    let term0_bot = q * v2_of(x);
    let term0 = term0_top + term0_bot;

    let mut terms = Vec::with_capacity(len);
    terms.push(McEstimate::new(term0, 0.0, 0, stream));
    for l in 1..len {
        let mean = acc.term_sum[l] / nf;
        let var = (acc.term_sumsq[l] / nf - mean * mean).max(0.0);
        terms.push(McEstimate::new(mean, (var / nf).sqrt(), samples, stream));
    }

    finalize_series(
        law, acc, terms, truncation, samples, stream, fixed_beta, term0_top,
    )
}

#[allow(clippy::too_many_arguments)]
fn finalize_series(
    law: &IncrementLaw,
    acc: Accum,
    terms: Vec<McEstimate>,
    truncation: u64,
    samples: u64,
    stream: RngStream,
    fixed_beta: Option<f64>,
    term0_top: f64,
) -> Result<USeriesEstimate, HarmonicError> {
    let nf = samples as f64;
    let len = terms.len();

    // tail fit window: prefer the last half of the measured terms; fall
    // back to the deepest terms that carry trustworthy Monte Carlo support
    let usable: Vec<usize> = (2..len)
        .filter(|&l| {
            acc.alive[l] >= 20
                && terms[l].value > 0.0
                && terms[l].stderr > 0.0
                && terms[l].stderr <= 0.6 * terms[l].value
        })
        .collect();
    let lo = (truncation / 2).max(1) as usize;
    let mut window: Vec<usize> = usable.iter().copied().filter(|&l| l >= lo).collect();
    if window.len() < 6 {
        let take = usable.len().min(10);
        window = usable[usable.len() - take..].to_vec();
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sig = Vec::new();
    let mut lvl_w = Vec::new();
    let mut lvl_c = Vec::new();
    let mut lvl_c_top = Vec::new();
    for &l in &window {
        let m = terms[l].value;
        xs.push((l as f64).ln());
        ys.push(m.ln());
        sig.push(terms[l].stderr / m);
        lvl_w.push((m / terms[l].stderr).powi(2));
        lvl_c.push(m);
        lvl_c_top.push(acc.term_sum_top[l] / nf);
    }

    let partial: f64 = terms.iter().map(|t| t.value).sum();
    // same accumulation order as `partial` so degenerate side weights
    // (p = 1 or q = 1) come out exactly
    let partial_top: f64 =
        term0_top + acc.term_sum_top.iter().map(|s| s / nf).sum::<f64>();

    let level_match = |beta: f64| -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut num_top = 0.0;
        for i in 0..lvl_c.len() {
            let l = xs[i].exp();
            num += lvl_w[i] * lvl_c[i] * l.powf(beta);
            num_top += lvl_w[i] * lvl_c_top[i] * l.powf(beta);
            den += lvl_w[i];
        }
        let c = num / den.max(f64::MIN_POSITIVE);
        let share = if num > 0.0 {
            (num_top / num).clamp(0.0, 1.0)
        } else {
            0.5
        };
        (c, share)
    };

    let (tail, tail_se, tail_top_share, beta_hat, beta_se) = if window.is_empty() {
        // no measurable mass anywhere: whatever remains is far below the
        // Monte Carlo resolution
        (0.0, 0.0, 0.5, None, None)
    } else if let Some(beta) = fixed_beta {
        let (c, share) = level_match(beta);
        let t = c * tail_sum(truncation, beta);
        (t, t * 0.25, share, Some(beta), None)
    } else {
        // fit the decay when the window is wide enough and the slope is
        // summable; otherwise fall back to a level match at the big-jump
        // rate alpha/2 (the slowest admissible decay) with full-tail
        // uncertainty
        let fitted = if xs.len() >= 6 {
            weighted_least_squares(&xs, &ys, &sig)
                .map(|fit| (-fit.slope, fit))
                .filter(|(beta, _)| *beta > 1.02)
        } else {
            None
        };
        match fitted {
            Some((beta, fit)) => {
                let (c_lvl, share) = level_match(beta);
                let t = c_lvl * tail_sum(truncation, beta);
                // delta-method on (intercept, slope)
                let l_half = (truncation as f64 + 0.5).ln();
                let dds = l_half + 1.0 / (beta - 1.0);
                let var_ln = fit.intercept_stderr.powi(2)
                    + dds * dds * fit.slope_stderr.powi(2)
                    + 2.0 * dds * fit.cov_slope_intercept;
                let tail_se = t * var_ln.max(0.0).sqrt();
                (t, tail_se, share, Some(beta), Some(fit.slope_stderr))
            }
            None => {
                let beta = (law.alpha() / 2.0).max(1.05);
                let (c, share) = level_match(beta);
                let t = c * tail_sum(truncation, beta);
                (t, t, share, None, None)
            }
        }
    };

    // the guard protects fitted tails; a caller who pins the exponent has
    // chosen the tail model deliberately and gets the fraction reported
    // instead
    let tail_fraction = tail / partial;
    if fixed_beta.is_none() && tail_fraction > TAIL_FRACTION_LIMIT {
        return Err(HarmonicError::TailDominates {
            fraction: tail_fraction,
            limit: TAIL_FRACTION_LIMIT,
        });
    }

    let total = partial + tail;
    let mean_t = acc.s_t / nf;
    let var_t = (acc.s_tt / nf - mean_t * mean_t).max(0.0);
    let total_stderr = (var_t / nf + tail_se * tail_se).sqrt();

    let mean_n = acc.s_n / nf;
    let var_n = (acc.s_nn / nf - mean_n * mean_n).max(0.0);
    let cov_tn = acc.s_tn / nf - mean_t * mean_n;

    // one-sided laws have exactly degenerate splits
    let top_numerator = if law.spec().q <= 0.0 {
        total
    } else if law.spec().p <= 0.0 {
        0.0
    } else {
        partial_top + tail * tail_top_share
    };
    let bottom_numerator = total - top_numerator;

    Ok(USeriesEstimate {
        terms,
        support: acc.alive,
        truncation,
        tail_bound: tail,
        tail_stderr: tail_se,
        total,
        total_stderr,
        beta_hat,
        beta_stderr: beta_se,
        tail_fraction,
        top_numerator,
        bottom_numerator,
        var_total: var_t / nf,
        var_top: var_n / nf,
        cov_total_top: cov_tn / nf,
        samples,
        seed: stream.seed,
        stream_id: stream.stream_id,
    })
}

fn tail_sum(truncation: u64, beta: f64) -> f64 {
    // sum_{l > L} l^-beta, midpoint-corrected integral
    (truncation as f64 + 0.5).powf(1.0 - beta) / (beta - 1.0)
}

impl USeriesEstimate {
    fn stream(&self) -> RngStream {
        RngStream::new(self.seed, self.stream_id)
    }

    /// The series total as an estimate record.
    pub fn total_estimate(&self) -> McEstimate {
        McEstimate::new(self.total, self.total_stderr, self.samples, self.stream())
    }

    /// Mixture weights `p(x) = top / total`, `q(x) = bottom / total` with
    /// delta-method errors from the per-path covariances of the Monte
    /// Carlo partial sums.
    pub fn weights(&self) -> (McEstimate, McEstimate) {
        let u = self.total;
        let p_hat = self.top_numerator / u;
        let q_hat = 1.0 - p_hat;
        // bottom = total - top pathwise, so its variance and covariance
        // derive from the tracked pair
        let var_bot = self.var_total + self.var_top - 2.0 * self.cov_total_top;
        let cov_tb = self.cov_total_top - self.var_top;
        let var_p = (q_hat * q_hat * self.var_top + p_hat * p_hat * var_bot
            - 2.0 * p_hat * q_hat * cov_tb)
            .max(0.0)
            / (u * u);
        let se = var_p.sqrt();
        (
            McEstimate::new(p_hat, se, self.samples, self.stream()),
            McEstimate::new(q_hat, se, self.samples, self.stream()),
        )
    }
}

/// Mixture-weight estimates plus the underlying series.
#[derive(Debug, Clone)]
pub struct MixtureWeights {
    pub p_of_x: McEstimate,
    pub q_of_x: McEstimate,
    pub series: USeriesEstimate,
}

/// Estimate `p(x)` and `q(x)`: side-split series numerators over the
/// series total, with propagated standard errors.
pub fn mixture_weights(
    x: &[f64],
    law: &IncrementLaw,
    vcache: &VCache,
    truncation: u64,
    samples: u64,
    stream: RngStream,
) -> Result<MixtureWeights, HarmonicError> {
    let series = estimate_u(
        x,
        law,
        vcache,
        truncation,
        samples,
        stream,
        Some(&SeriesSamplingPolicy::default()),
        None,
    )?;
    let (p_of_x, q_of_x) = series.weights();
    Ok(MixtureWeights {
        p_of_x,
        q_of_x,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::{VCache, VCacheConfig};
    use crate::increments::build_law;

    fn ctx() -> (IncrementLaw, VCache) {
        let law = build_law(2.5, 0.5, 0.5, 1.0).unwrap();
        let cfg = VCacheConfig {
            axes: vec![0.0, 0.5, 1.25, 2.5, 5.0, 10.0, 20.0, 40.0],
            samples_per_node: 10_000,
            far_min_gap: 35.0,
            spot_checks: 0,
            ..Default::default()
        };
        let cache = VCache::build(&law, 3, &cfg, RngStream::named(31, "us-vc")).unwrap();
        (law, cache)
    }

    fn ladder() -> SeriesSamplingPolicy {
        SeriesSamplingPolicy::default()
    }

    #[test]
    fn term_zero_is_exact_plugin_value() {
        let (law, cache) = ctx();
        let x = [0.0, 1.0, 2.0, 3.0];
        let series = estimate_u(
            &x,
            &law,
            &cache,
            64,
            40_000,
            RngStream::named(32, "us-t0"),
            Some(&ladder()),
            Some(1.25),
        )
        .unwrap();
        let expect = 0.5 * cache.eval(&x[..3]) + 0.5 * cache.eval(&x[1..]);
        assert_eq!(series.terms[0].value, expect);
        assert_eq!(series.terms[0].stderr, 0.0);
    }

    #[test]
    fn ladder_agrees_with_plain_sampling() {
        // same estimand, two proposal distributions; totals must agree
        let (law, cache) = ctx();
        let x = [0.0, 1.0, 2.0, 3.0];
        let plain = estimate_u(
            &x,
            &law,
            &cache,
            32,
            400_000,
            RngStream::named(33, "us-plain"),
            None,
            Some(1.25),
        )
        .unwrap();
        let forced = estimate_u(
            &x,
            &law,
            &cache,
            32,
            400_000,
            RngStream::named(34, "us-forced"),
            Some(&ladder()),
            Some(1.25),
        )
        .unwrap();
        let joint = (plain.total_stderr.powi(2) + forced.total_stderr.powi(2)).sqrt();
        assert!(
            (plain.total - forced.total).abs() <= 4.0 * joint,
            "plain {} +- {} vs ladder {} +- {}",
            plain.total,
            plain.total_stderr,
            forced.total,
            forced.total_stderr
        );
        // the ladder must deliver usable support deep into the series
        // where plain sampling has none
        assert!(forced.support[30] > 4 * plain.support[30].max(1));
    }

    #[test]
    fn terms_positive_and_eventually_decreasing() {
        let (law, cache) = ctx();
        let x = [0.0, 1.0, 2.0, 3.0];
        let series = estimate_u(
            &x,
            &law,
            &cache,
            256,
            150_000,
            RngStream::named(35, "us-mono"),
            Some(&ladder()),
            None,
        )
        .unwrap();
        for t in &series.terms[..64] {
            assert!(t.value > 0.0);
        }
        // beyond the early bulge the terms decrease, up to joint noise
        for l in 4..48 {
            let a = &series.terms[l];
            let b = &series.terms[l + 1];
            let joint = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            assert!(
                b.value <= a.value + 2.0 * joint,
                "terms rose at {l}: {} -> {} (joint {joint})",
                a.value,
                b.value
            );
        }
        assert!(series.total > 0.0);
        assert!(series.tail_fraction <= TAIL_FRACTION_LIMIT);
        if let Some(beta) = series.beta_hat {
            assert!(beta > 1.02 && beta < 6.0, "beta {beta}");
        }
    }

    #[test]
    fn weights_sum_to_one_and_split_evenly_when_symmetric() {
        let (law, cache) = ctx();
        // mirror-symmetric start with a symmetric law: p(x) = q(x) = 1/2
        let x = [-1.5, -0.5, 0.5, 1.5];
        let w = mixture_weights(&x, &law, &cache, 256, 150_000, RngStream::named(36, "us-w"))
            .unwrap();
        assert!((w.p_of_x.value + w.q_of_x.value - 1.0).abs() < 1e-12);
        assert!(
            (w.p_of_x.value - 0.5).abs() <= 3.0 * w.p_of_x.stderr,
            "p(x) = {} +- {}",
            w.p_of_x.value,
            w.p_of_x.stderr
        );
    }

    #[test]
    fn one_sided_law_gives_degenerate_weights() {
        let law = build_law(2.5, 0.35, 0.0, 2.0).unwrap();
        let cfg = VCacheConfig {
            axes: vec![0.0, 0.5, 1.25, 2.5, 5.0, 10.0, 20.0, 40.0],
            samples_per_node: 8_000,
            far_min_gap: 35.0,
            spot_checks: 0,
            ..Default::default()
        };
        let cache = VCache::build(&law, 3, &cfg, RngStream::named(37, "us-one")).unwrap();
        let w = mixture_weights(
            &[0.0, 1.0, 2.0, 3.0],
            &law,
            &cache,
            384,
            80_000,
            RngStream::named(38, "us-one-w"),
        )
        .unwrap();
        assert_eq!(w.p_of_x.value, 1.0);
        assert_eq!(w.q_of_x.value, 0.0);
    }
}
