//! Orchestrated end-to-end studies with CSV/JSON artifacts and
//! per-criterion verdicts.

mod audit;
mod config;
mod report;
mod theorem1;
mod theorem2;

pub use audit::{
    panel_states, run_kernel_audit, LIFETIME_CAP_FRACTION, LIFETIME_KS_TOL, MASS_ABS_TOL,
};
pub use config::{ConfigError, ExperimentConfig};
pub use report::{
    estimate_csv_row, plot_data, tail_curve_csv, write_json, write_text, ComparisonReport,
    CriterionResult, Manifest, ReportError, RunPaths,
};
pub use theorem1::{run_theorem1_study, LIGHT_SLOPE_TOL, SLOPE_TOL};
pub use theorem2::{run_theorem2_study, KS_TOL};

use std::path::PathBuf;

use thiserror::Error;

use crate::bm::BmError;
use crate::chain::ChainError;
use crate::domain::DomainError;
use crate::harmonic::{HarmonicContext, HarmonicError, VCache};
use crate::increments::IncrementLaw;
use crate::rng::RngStream;
use crate::tail::TailError;
use crate::walk::WalkError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("domain: {0}")]
    Domain(#[from] DomainError),
    #[error("walk-engine: {0}")]
    Walk(#[from] WalkError),
    #[error("harmonic: {0}")]
    Harmonic(#[from] HarmonicError),
    #[error("tail-estimator: {0}")]
    Tail(#[from] TailError),
    #[error("conditioned-chain: {0}")]
    Chain(#[from] ChainError),
    #[error("bm-reference: {0}")]
    Bm(#[from] BmError),
    #[error("report: {0}")]
    Report(#[from] ReportError),
}

/// Where the shared surrogate calibration lives under the output root.
pub fn cache_path(root: &std::path::Path) -> PathBuf {
    root.join("cache").join("surrogates.owhc")
}

/// Load or build the full harmonic context for this configuration,
/// persisting it under the output root so later subcommands reuse it.
pub fn context_for_at(
    cfg: &ExperimentConfig,
    law: &IncrementLaw,
    root: Option<&std::path::Path>,
) -> Result<HarmonicContext, ExperimentError> {
    let scfg = cfg.surrogate_config();
    let stream = RngStream::named(cfg.seed, "surrogates");
    let ctx = match root {
        Some(root) => {
            HarmonicContext::load_or_build(&cache_path(root), law, cfg.params.k, &scfg, stream)?
        }
        None => HarmonicContext::build(law, cfg.params.k, &scfg, stream)?,
    };
    Ok(ctx)
}

/// In-memory context (no persistence).
pub fn context_for(
    cfg: &ExperimentConfig,
    law: &IncrementLaw,
) -> Result<HarmonicContext, ExperimentError> {
    context_for_at(cfg, law, None)
}

/// A V-surrogate alone, for studies that do not need the full context.
pub fn vcache_for(cfg: &ExperimentConfig, law: &IncrementLaw) -> Result<VCache, ExperimentError> {
    let scfg = cfg.surrogate_config();
    Ok(VCache::build(
        law,
        cfg.params.k - 1,
        &scfg.v,
        RngStream::named(cfg.seed, "surrogates").named_substream("vcache"),
    )?)
}
