//! Shared sequential-hazard jump planting for the harmonic estimators.
//!
//! Exit values of the Vandermonde martingale and alive values of the
//! Green series are both dominated by rare single big jumps whose sizes
//! span every dyadic scale, so plain sampling has infinite variance and
//! drifting means. The proposal here plants at most one jump per path:
//! at step `l`, while no jump has been planted, with hazard
//! `min(0.5, 0.35 s / l)` one coordinate's increment is replaced by a
//! tail-conditioned draw beyond a threshold drawn uniformly from a dyadic
//! ladder. The marginal density ratio over the plant time and scale is a
//! running prefix sum of per-step closed-form factors evaluated on the
//! realized increments, so no bookkeeping survives the path, and the
//! defensive mixture bounds every weight by its inverse.

use rand::RngCore;

use crate::increments::{IncrementLaw, TailSide};
use crate::rng::open01;

use super::SeriesSamplingPolicy;

/// Which coordinates the proposal may plant on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TiltCoords {
    /// Only the bottom and top walks (survival-driving jumps).
    Extremes,
    /// Any coordinate (exit-value-driving jumps).
    All,
}

pub(crate) struct ExitTilt<'a> {
    law: &'a IncrementLaw,
    pub eps: f64,
    hazard_scale: f64,
    thresholds: Vec<f64>,
    p_up: Vec<f64>,
    p_down: Vec<f64>,
    w_up: f64,
    m: usize,
    coords: TiltCoords,
}

impl<'a> ExitTilt<'a> {
    /// `cap_horizon` sizes the dyadic threshold ladder: levels run from
    /// `b sigma sqrt(base)` doubling in horizon until the cap is covered.
    pub(crate) fn new(
        law: &'a IncrementLaw,
        policy: &SeriesSamplingPolicy,
        cap_horizon: u64,
        m: usize,
        coords: TiltCoords,
    ) -> Option<Self> {
        let spec = law.spec();
        let mut w_up = spec.p.max(0.0);
        let mut w_down = spec.q.max(0.0);
        if spec.p <= 0.0 {
            w_up = 0.0;
        }
        if spec.q <= 0.0 {
            w_down = 0.0;
        }
        if w_up + w_down <= 0.0 || policy.defensive >= 1.0 {
            return None;
        }
        let sigma = law.std_dev();
        let mut thresholds = Vec::new();
        let mut h = policy.base_horizon.max(2);
        loop {
            thresholds
                .push((policy.jump_scale_b * sigma * (h as f64).sqrt()).max(law.body_cut()));
            if h >= cap_horizon {
                break;
            }
            h *= 2;
        }
        thresholds.dedup();
        let p_up = thresholds.iter().map(|&t| law.right_tail(t)).collect();
        let p_down = thresholds.iter().map(|&t| law.left_tail(t)).collect();
        Some(Self {
            law,
            eps: policy.defensive,
            hazard_scale: 0.35 * policy.jump_time_range as f64 / 8.0,
            thresholds,
            p_up,
            p_down,
            w_up: w_up / (w_up + w_down),
            m,
            coords,
        })
    }

    #[inline]
    pub(crate) fn hazard(&self, l: u64) -> f64 {
        (self.hazard_scale / l as f64).min(0.5)
    }

    fn tilted_count(&self) -> usize {
        match self.coords {
            TiltCoords::Extremes => 2.min(self.m),
            TiltCoords::All => self.m,
        }
    }

    /// Draw the plant for this step: (coordinate index, value).
    #[inline]
    pub(crate) fn draw_plant<R: RngCore>(&self, rng: &mut R) -> (usize, f64) {
        let level = ((open01(rng) * self.thresholds.len() as f64) as usize)
            .min(self.thresholds.len() - 1);
        let coord = match self.coords {
            TiltCoords::All => {
                ((open01(rng) * self.m as f64) as usize).min(self.m - 1)
            }
            TiltCoords::Extremes => {
                if self.m == 1 || open01(rng) < 0.5 {
                    0
                } else {
                    self.m - 1
                }
            }
        };
        let side = if open01(rng) < self.w_up {
            TailSide::Right
        } else {
            TailSide::Left
        };
        let (val, _llr) = self
            .law
            .sample_tail_conditioned(self.thresholds[level], side, rng)
            .expect("ladder thresholds sit at or above the cut");
        (coord, val)
    }

    /// Density ratio of one planted step against the walk law, averaged
    /// over levels and plantable coordinates, evaluated on the realized
    /// increments of the step.
    #[inline]
    pub(crate) fn step_ratio(&self, incs: &[f64]) -> f64 {
        debug_assert_eq!(incs.len(), self.m);
        let t0 = self.thresholds[0];
        let mut h = 0.0;
        let probe = |c: usize, h: &mut f64| {
            let inc = incs[c];
            if inc.abs() <= t0 {
                return;
            }
            for j in 0..self.thresholds.len() {
                if self.w_up > 0.0 && inc > self.thresholds[j] {
                    *h += self.w_up / self.p_up[j];
                }
                if self.w_up < 1.0 && inc < -self.thresholds[j] {
                    *h += (1.0 - self.w_up) / self.p_down[j];
                }
            }
        };
        match self.coords {
            TiltCoords::All => {
                for c in 0..self.m {
                    probe(c, &mut h);
                }
            }
            TiltCoords::Extremes => {
                probe(0, &mut h);
                if self.m > 1 {
                    probe(self.m - 1, &mut h);
                }
            }
        }
        h / (self.thresholds.len() * self.tilted_count()) as f64
    }

    /// Final mixture weight from the accumulated prefix sum.
    #[inline]
    pub(crate) fn weight(&self, rho_sum: f64, prefix: f64) -> f64 {
        1.0 / (self.eps + (1.0 - self.eps) * (rho_sum + prefix))
    }
}
