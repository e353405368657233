//! The increment law: a mean-zero distribution whose tails are exact power
//! laws beyond a threshold.
//!
//! Construction: a three-part mixture. With weight `w+ = p * body_cut^-alpha`
//! a Pareto(alpha) tail on [body_cut, inf); with weight `w- = q * body_cut^-alpha`
//! its negated mirror; the remaining weight is a linearly tilted uniform
//! density on [-body_cut, body_cut], the tilt solved in closed form so the
//! total mean is exactly zero. Beyond the cut the tail identities
//! `P(X > x) = p x^-alpha` and `P(X < -x) = q x^-alpha` hold exactly, which
//! makes tail assertions closed-form testable and keeps likelihood ratios
//! for importance sampling exact.
//!
//! Sampling is inverse-CDF throughout: one uniform per variate, no
//! rejection, stable across platforms.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::domain::DomainError;
use crate::rng::{fnv1a64, open01};

/// Construction parameters for the increment law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementLawSpec {
    /// Tail index (must exceed 2 so the variance is finite).
    pub alpha: f64,
    /// Right-tail constant: P(X > x) = p x^-alpha for x >= body_cut.
    pub p: f64,
    /// Left-tail constant.
    pub q: f64,
    /// Threshold where the pure power tails begin.
    pub body_cut: f64,
}

impl Default for IncrementLawSpec {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            p: 0.5,
            q: 0.5,
            body_cut: 1.0,
        }
    }
}

/// Which tail to condition on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailSide {
    Right,
    Left,
}

/// A validated increment law with precomputed mixture constants.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementLaw {
    spec: IncrementLawSpec,
    /// Mass of the right tail.
    w_plus: f64,
    /// Mass of the left tail.
    w_minus: f64,
    /// Mass of the body.
    w_body: f64,
    /// Body density g(x) = c0 + c1 * x on [-body_cut, body_cut].
    c0: f64,
    c1: f64,
    variance: f64,
}

/// Build the law. Errors when the tail mass exceeds one or when the
/// zero-mean tilt would push the body density negative; the remedy for
/// both is a larger `body_cut`.
pub fn build_law(
    alpha: f64,
    p: f64,
    q: f64,
    body_cut: f64,
) -> Result<IncrementLaw, DomainError> {
    IncrementLaw::new(IncrementLawSpec {
        alpha,
        p,
        q,
        body_cut,
    })
}

impl IncrementLaw {
    pub fn new(spec: IncrementLawSpec) -> Result<Self, DomainError> {
        let IncrementLawSpec {
            alpha,
            p,
            q,
            body_cut,
        } = spec;
        if !(alpha > 2.0) {
            return Err(DomainError::AlphaTooSmallForLaw(alpha));
        }
        if p < 0.0 || q < 0.0 || !(body_cut > 0.0) {
            return Err(DomainError::Other(format!(
                "law parameters need p, q >= 0 and body_cut > 0 (got p={p}, q={q}, cut={body_cut})"
            )));
        }
        let m = body_cut;
        let w_plus = p * m.powf(-alpha);
        let w_minus = q * m.powf(-alpha);
        let mass = w_plus + w_minus;
        if mass > 1.0 + 1e-12 {
            return Err(DomainError::TailMassExceedsOne { mass });
        }
        let w_body = (1.0 - mass).max(0.0);

        // Tail means are +- (alpha/(alpha-1)) * w * body_cut; the body tilt
        // must cancel their sum.
        let tail_mean = (p - q) * alpha * m.powf(1.0 - alpha) / (alpha - 1.0);
        let (c0, c1) = if w_body <= 1e-15 {
            if tail_mean.abs() > 1e-12 {
                return Err(DomainError::TiltInfeasible);
            }
            (0.0, 0.0)
        } else {
            let c0 = w_body / (2.0 * m);
            // integral of x*(c0 + c1 x) over [-m, m] = (2/3) c1 m^3 = -tail_mean
            let c1 = -1.5 * tail_mean / (m * m * m);
            if c0 - c1.abs() * m < -1e-15 * c0.max(1.0) {
                return Err(DomainError::TiltInfeasible);
            }
            (c0, c1)
        };

        // Second moment: tails (p+q) alpha m^{2-alpha}/(alpha-2), body 2 c0 m^3 / 3.
        let variance =
            (p + q) * alpha * m.powf(2.0 - alpha) / (alpha - 2.0) + 2.0 * c0 * m * m * m / 3.0;

        Ok(Self {
            spec,
            w_plus,
            w_minus,
            w_body,
            c0,
            c1,
            variance,
        })
    }

    pub fn spec(&self) -> &IncrementLawSpec {
        &self.spec
    }

    pub fn alpha(&self) -> f64 {
        self.spec.alpha
    }

    pub fn body_cut(&self) -> f64 {
        self.spec.body_cut
    }

    /// Analytic mean of the mixture (zero by construction, kept for tests).
    pub fn mean(&self) -> f64 {
        let IncrementLawSpec {
            alpha, p, q, body_cut: m, ..
        } = self.spec;
        (p - q) * alpha * m.powf(1.0 - alpha) / (alpha - 1.0)
            + 2.0 * self.c1 * m * m * m / 3.0
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// P(X > x); exact power law for x >= body_cut.
    pub fn right_tail(&self, x: f64) -> f64 {
        if x >= self.spec.body_cut {
            self.spec.p * x.powf(-self.spec.alpha)
        } else {
            1.0 - self.cdf(x)
        }
    }

    /// P(X < -x); exact power law for x >= body_cut.
    pub fn left_tail(&self, x: f64) -> f64 {
        if x >= self.spec.body_cut {
            self.spec.q * x.powf(-self.spec.alpha)
        } else {
            self.cdf(-x)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let m = self.spec.body_cut;
        let alpha = self.spec.alpha;
        if x <= -m {
            self.spec.q * (-x).powf(-alpha)
        } else if x >= m {
            1.0 - self.spec.p * x.powf(-alpha)
        } else {
            self.w_minus + self.c0 * (x + m) + 0.5 * self.c1 * (x * x - m * m)
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        let m = self.spec.body_cut;
        let alpha = self.spec.alpha;
        let ax = x.abs();
        if ax >= m {
            let c = if x > 0.0 { self.spec.p } else { self.spec.q };
            c * alpha * ax.powf(-alpha - 1.0)
        } else {
            (self.c0 + self.c1 * x).max(0.0)
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let d = self.density(x);
        if d > 0.0 {
            d.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Inverse CDF. Strictly monotone on (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        debug_assert!(u > 0.0 && u < 1.0);
        let m = self.spec.body_cut;
        let alpha = self.spec.alpha;
        if u < self.w_minus {
            -m * (u / self.w_minus).powf(-1.0 / alpha)
        } else if u > 1.0 - self.w_plus {
            m * ((1.0 - u) / self.w_plus).powf(-1.0 / alpha)
        } else if self.w_body <= 1e-15 {
            // saturated tails: the CDF is flat across the body interval and
            // u can only equal its boundary value; return the gap edge
            if u <= self.w_minus {
                -m
            } else {
                m
            }
        } else {
            // body: solve c1/2 x^2 + c0 x + (w_minus + c0 m - c1 m^2/2 - u) = 0
            let c = self.w_minus + self.c0 * m - 0.5 * self.c1 * m * m - u;
            if self.c1.abs() < 1e-14 * self.c0 {
                (-c / self.c0).clamp(-m, m)
            } else {
                let a = 0.5 * self.c1;
                let disc = (self.c0 * self.c0 - 4.0 * a * c).max(0.0).sqrt();
                // stable pair of roots; the density c0 + c1 x > 0 on the body
                // makes the CDF increasing, so exactly one root is in range
                let r1 = (-self.c0 - disc.copysign(self.c0)) / (2.0 * a);
                let r2 = c / (a * r1);
                let inside = |r: f64| r >= -m - 1e-9 && r <= m + 1e-9;
                let r = if inside(r2) { r2 } else { r1 };
                r.clamp(-m, m)
            }
        }
    }

    /// One variate by inverse CDF; consumes exactly one uniform.
    #[inline]
    pub fn sample<R: RngCore>(&self, rng: &mut R) -> f64 {
        self.quantile(open01(rng))
    }

    /// Draw from the exact conditional tail `X | X > threshold` (Right) or
    /// `X | X < -threshold` (Left). Returns the value and the log likelihood
    /// ratio log(conditional density / unconditional density), which equals
    /// `-log P(tail beyond threshold)` and is constant in the value.
    pub fn sample_tail_conditioned<R: RngCore>(
        &self,
        threshold: f64,
        side: TailSide,
        rng: &mut R,
    ) -> Result<(f64, f64), DomainError> {
        if threshold < self.spec.body_cut {
            return Err(DomainError::ThresholdBelowCut {
                threshold,
                body_cut: self.spec.body_cut,
            });
        }
        let alpha = self.spec.alpha;
        let u = open01(rng);
        let mag = threshold * u.powf(-1.0 / alpha);
        match side {
            TailSide::Right => {
                if self.spec.p <= 0.0 {
                    return Err(DomainError::Other(
                        "right tail has zero mass (p = 0)".into(),
                    ));
                }
                let tail_prob = self.spec.p * threshold.powf(-alpha);
                Ok((mag, -tail_prob.ln()))
            }
            TailSide::Left => {
                if self.spec.q <= 0.0 {
                    return Err(DomainError::Other(
                        "left tail has zero mass (q = 0)".into(),
                    ));
                }
                let tail_prob = self.spec.q * threshold.powf(-alpha);
                Ok((-mag, -tail_prob.ln()))
            }
        }
    }

    /// Hash of the law parameters, used to key surrogate caches.
    pub fn law_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(33);
        bytes.push(1u8); // construction version
        for v in [
            self.spec.alpha,
            self.spec.p,
            self.spec.q,
            self.spec.body_cut,
        ] {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        fnv1a64(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stats::{adaptive_simpson, hill_estimator, OnlineStats};

    fn desk_law() -> IncrementLaw {
        build_law(2.5, 0.5, 0.5, 1.0).unwrap()
    }

    /// Asymmetric law with enough body mass for the tilt to be feasible.
    fn asym_law() -> IncrementLaw {
        build_law(2.5, 0.8, 0.2, 2.0).unwrap()
    }

    #[test]
    fn symmetric_law_needs_no_tilt() {
        let law = desk_law();
        assert_eq!(law.c1, 0.0);
        assert!(law.mean().abs() < 1e-15);
    }

    #[test]
    fn mass_constraint_rejected() {
        let err = build_law(2.5, 0.6, 0.6, 1.0).unwrap_err();
        assert!(matches!(err, DomainError::TailMassExceedsOne { .. }));
    }

    #[test]
    fn infeasible_tilt_rejected_until_cut_raised() {
        // Saturated tails with asymmetry: no body freedom left.
        assert!(matches!(
            build_law(2.5, 0.8, 0.2, 1.0),
            Err(DomainError::TiltInfeasible)
        ));
        // Strong asymmetry at cut 1 demands more tilt than the body allows.
        assert!(matches!(
            build_law(2.5, 0.4, 0.1, 1.0),
            Err(DomainError::TiltInfeasible)
        ));
        // Raising the cut restores feasibility.
        assert!(build_law(2.5, 0.8, 0.2, 2.0).is_ok());
    }

    #[test]
    fn analytic_mean_is_zero_for_asymmetric_law() {
        let law = asym_law();
        assert!(law.mean().abs() < 1e-12, "mean = {}", law.mean());
    }

    #[test]
    fn density_integrates_to_one_and_mean_zero_by_quadrature() {
        for law in [desk_law(), asym_law()] {
            let f = |x: f64| law.density(x);
            // split at the cut to keep the integrand smooth per panel
            let m = law.body_cut();
            let body = adaptive_simpson(&f, -m, m, 1e-12);
            // analytic tail mass beyond a finite bound
            let far = 1e6f64;
            let tails = adaptive_simpson(&f, m, far, 1e-12)
                + adaptive_simpson(&f, -far, -m, 1e-12)
                + law.right_tail(far)
                + law.left_tail(far);
            assert!(
                (body + tails - 1.0).abs() < 1e-6,
                "total mass {}",
                body + tails
            );
            let g = |x: f64| x * law.density(x);
            let mean_num = adaptive_simpson(&g, -m, m, 1e-12)
                + adaptive_simpson(&g, m, far, 1e-10)
                + adaptive_simpson(&g, -far, -m, 1e-10);
            // discard the analytic remainder beyond 1e6 (order 1e-7)
            assert!(mean_num.abs() < 1e-3, "numeric mean {}", mean_num);
        }
    }

    #[test]
    fn cdf_quantile_roundtrip() {
        for law in [desk_law(), asym_law(), build_law(2.5, 0.15, 0.05, 1.0).unwrap()] {
            for i in 1..200 {
                let u = i as f64 / 200.0;
                let x = law.quantile(u);
                assert!(
                    (law.cdf(x) - u).abs() < 1e-10,
                    "u={u} x={x} cdf={}",
                    law.cdf(x)
                );
            }
        }
    }

    #[test]
    fn exact_tail_identity() {
        let law = desk_law();
        for x in [1.0, 2.0, 10.0, 100.0] {
            assert!((law.right_tail(x) - 0.5 * x.powf(-2.5)).abs() < 1e-15);
            assert!((law.left_tail(x) - 0.5 * x.powf(-2.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn log_density_pareto_region_and_symmetry() {
        let law = desk_law();
        let x: f64 = 3.7;
        let expect = (0.5 * 2.5 * x.powf(-3.5)).ln();
        assert!((law.log_density(x) - expect).abs() < 1e-12);
        assert!((law.log_density(x) - law.log_density(-x)).abs() < 1e-12);
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let law = desk_law();
        let mut rng = RngStream::named(123, "incr-mean").rng();
        let mut s = OnlineStats::default();
        let n = 1_000_000;
        for _ in 0..n {
            s.add(law.sample(&mut rng));
        }
        let bound = 4.0 * s.stddev() / (n as f64).sqrt();
        assert!(s.mean().abs() <= bound, "mean {} bound {}", s.mean(), bound);
        // sample variance should match the analytic one (generous CLT-ish bound;
        // the 4th moment is infinite so convergence is slow)
        assert!((s.variance() - law.variance()).abs() / law.variance() < 0.2);
    }

    #[test]
    fn empirical_tail_ratio_matches_p() {
        let law = desk_law();
        let mut rng = RngStream::named(123, "incr-tail").rng();
        let n = 1_000_000u64;
        let x0 = 10.0f64;
        let mut hits = 0u64;
        for _ in 0..n {
            if law.sample(&mut rng) > x0 {
                hits += 1;
            }
        }
        let expect = 0.5 * x0.powf(-2.5);
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        let got = hits as f64 / n as f64;
        assert!(
            (got - expect).abs() <= 3.0 * se,
            "tail {} expect {} se {}",
            got,
            expect,
            se
        );
    }

    #[test]
    fn hill_estimator_recovers_alpha() {
        let law = desk_law();
        let mut rng = RngStream::named(123, "incr-hill").rng();
        let n = 1_000_000usize;
        let draws: Vec<f64> = (0..n).map(|_| law.sample(&mut rng).abs()).collect();
        let alpha_hat = hill_estimator(&draws, n / 100);
        assert!(
            (alpha_hat - 2.5).abs() < 0.15,
            "hill estimate {alpha_hat} vs 2.5"
        );
    }

    #[test]
    fn tail_conditioned_value_and_ratio() {
        let law = desk_law();
        let t = 5.0;
        let mut rng = RngStream::named(99, "cond").rng();
        let mut s = OnlineStats::default();
        let n = 200_000;
        for _ in 0..n {
            let (v, llr) = law
                .sample_tail_conditioned(t, TailSide::Right, &mut rng)
                .unwrap();
            assert!(v > t);
            assert!((llr + (0.5 * t.powf(-2.5)).ln()).abs() < 1e-12);
            s.add(v);
        }
        // Pareto mean: t * alpha/(alpha-1) = 5 * 2.5/1.5 = 25/3
        let expect = 25.0 / 3.0;
        assert!(
            (s.mean() - expect).abs() <= 4.0 * s.stderr(),
            "mean {} expect {}",
            s.mean(),
            expect
        );
    }

    #[test]
    fn tail_conditioned_reweighting_unbiased() {
        // E[w * 1{X > 2t} | forced beyond t] should reproduce P(X > 2t),
        // with w = exp(-llr) = P(X > t).
        let law = desk_law();
        let t = 2.0;
        let mut rng = RngStream::named(7, "reweight").rng();
        let n = 100_000u64;
        let mut acc = 0.0;
        for _ in 0..n {
            let (v, llr) = law
                .sample_tail_conditioned(t, TailSide::Right, &mut rng)
                .unwrap();
            if v > 2.0 * t {
                acc += (-llr).exp();
            }
        }
        let est = acc / n as f64;
        let expect = law.right_tail(2.0 * t);
        assert!(
            (est - expect).abs() / expect < 0.05,
            "est {est} expect {expect}"
        );
    }

    #[test]
    fn threshold_below_cut_rejected() {
        let law = desk_law();
        let mut rng = RngStream::new(1, 1).rng();
        let err = law
            .sample_tail_conditioned(0.5, TailSide::Right, &mut rng)
            .unwrap_err();
        assert!(matches!(err, DomainError::ThresholdBelowCut { .. }));
    }

    #[test]
    fn law_hash_distinguishes_parameters() {
        let a = desk_law().law_hash();
        let b = build_law(2.5, 0.5, 0.5, 2.0).unwrap().law_hash();
        let c = build_law(2.6, 0.5, 0.5, 1.0).unwrap().law_hash();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, desk_law().law_hash());
    }
}
