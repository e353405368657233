//! Simulation and estimation toolkit for `k` ordered random walks with
//! regularly varying increment tails.
//!
//! The library provides, roughly bottom-up:
//!
//! - [`domain`]: parameter validation, Weyl-chamber geometry, Vandermonde-type
//!   products and the closed-form survival exponent.
//! - [`increments`]: a mean-zero increment law with exact power tails,
//!   inverse-CDF sampling, densities and tail-conditioned sampling.
//! - [`rng`]: reproducible counter-based random number streams.
//! - [`walk`]: the multivariate walk, chamber exit times and direct
//!   survival Monte Carlo.
//! - [`harmonic`]: Monte Carlo estimation of the ordered-walk harmonic
//!   function, the superharmonic combination `v`, the Green-series `U`
//!   and the mixture weights `p(x)`, `q(x)`.
//! - [`tail`]: survival-probability estimation across horizon grids with
//!   forced-big-jump importance sampling and multilevel splitting, plus
//!   log-log slope fits.
//! - [`chain`]: the conditioned Markov chain on the partially compactified
//!   chamber (freeze states with one coordinate at plus/minus infinity) and
//!   the killed in-chamber chain.
//! - [`bm`]: Brownian reference objects — Dyson Brownian motion, the ordered
//!   clearance functional `psi`, its tail integral `theta`, and the limit
//!   start law / conditioned limit process.
//! - [`experiments`]: end-to-end studies with CSV/JSON artifacts.

pub mod bm;
pub mod chain;
pub mod domain;
pub mod experiments;
pub mod harmonic;
pub mod increments;
pub mod onestep;
pub mod rng;
pub mod stats;
pub mod tail;
pub mod walk;

pub use domain::{ChamberPoint, CompactPoint, DomainError, Frozen, WalkParams};
pub use increments::{IncrementLaw, IncrementLawSpec, TailSide};
pub use rng::RngStream;
pub use stats::McEstimate;
