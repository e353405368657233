//! Brownian-side reference objects: Dyson Brownian motion, the ordered
//! clearance functional, its tail integral, and the limit start law plus
//! conditioned limit paths.

mod dyson;
mod limit;
mod psi;

pub use dyson::{normal_order_stat_means, simulate_dyson, DysonPath};
pub use limit::{
    sample_limit_paths, theta_of_a, JumpSide, LimitPathBatch, LimitStartLaw, TabulatedF,
    ThetaEstimate,
};
pub use psi::{estimate_psi, estimate_psi_curve, PsiConfig, PsiCurve};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BmError {
    #[error("step-size halving reached its floor; the base step is too coarse")]
    StepSizeUnderflow,
    #[error("start vector not strictly ordered")]
    StartNotOrdered,
    #[error("degenerate grid or parameters")]
    BadGrid,
    #[error("pack-ordering ensemble degenerate ({alive} alive at level {level}); raise paths or coarsen the gap grid")]
    DenominatorVanishes { alive: usize, level: f64 },
    #[error("rejection acceptance {acceptance:.2e} at gap {a}: raise the gap regularization")]
    RejectionStarved { acceptance: f64, a: f64 },
}
