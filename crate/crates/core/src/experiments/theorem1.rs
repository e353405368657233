//! Exit-time tail study: survival curve under forced-jump importance
//! sampling, log-log slope against the closed-form exponent, a
//! bounded-increment control run, importance-sampling validity checks at
//! a small horizon, and intercept consistency across two starting points.

use serde_json::json;

use crate::domain::theory_exponent;
use crate::harmonic::{estimate_u, SeriesSamplingPolicy, VCache};
use crate::increments::build_law;
use crate::rng::RngStream;
use crate::tail::{compare_intercept, estimate_survival, Method, TailCurve};
use crate::walk::{survival_grid_mc, SubWalkSelector};

use super::config::ExperimentConfig;
use super::report::{
    plot_data, tail_curve_csv, write_text, ComparisonReport, CriterionResult, RunPaths,
};
use super::{vcache_for, ExperimentError};

/// Slope tolerance around the closed-form exponent for the heavy-tail fit.
pub const SLOPE_TOL: f64 = 0.25;
/// Slope tolerance for the bounded-increment control.
pub const LIGHT_SLOPE_TOL: f64 = 0.15;

/// Per-point sample budgets grow with the horizon so the deep points keep
/// useful survivor counts; `base` is the configured budget at the last
/// grid point.
fn scaled_samples(base: u64, n: u64, n_max: u64) -> u64 {
    ((base as f64) * (n as f64 / n_max as f64).sqrt()).max(200_000.0) as u64
}

fn curve_with_scaled_budgets(
    x: &[f64],
    law: &crate::increments::IncrementLaw,
    grid: &[u64],
    policy: &crate::tail::ForcedJumpPolicy,
    base: u64,
    stream: RngStream,
) -> Result<TailCurve, ExperimentError> {
    let n_max = *grid.last().unwrap();
    let mut estimates = Vec::new();
    let mut methods = Vec::new();
    let mut ess = Vec::new();
    for (i, &n) in grid.iter().enumerate() {
        let samples = scaled_samples(base, n, n_max);
        let est = estimate_survival(
            x,
            law,
            n,
            Method::ForcedJump,
            policy,
            samples,
            stream.substream(i as u64),
        )?;
        eprintln!(
            "  horizon {n}: p = {:.4e} +- {:.2e} (ess {:.0}/{:.2e})",
            est.est.value, est.est.stderr, est.ess_positive, est.ess_all
        );
        methods.push(est.method);
        ess.push(est.ess_positive);
        estimates.push(est.est);
    }
    refit(TailCurve {
        grid: grid.to_vec(),
        estimates,
        methods,
        ess,
        fitted_slope: 0.0,
        slope_stderr: 0.0,
        intercept: 0.0,
        intercept_stderr: 0.0,
        dropped: Vec::new(),
    })
}

fn refit(mut curve: TailCurve) -> Result<TailCurve, ExperimentError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sig = Vec::new();
    let mut dropped = Vec::new();
    for (i, est) in curve.estimates.iter().enumerate() {
        let rel = est.stderr / est.value;
        if est.value > 0.0 && rel <= crate::tail::FIT_MAX_REL_STDERR {
            xs.push((curve.grid[i] as f64).ln());
            ys.push(est.value.ln());
            sig.push(rel.max(1e-6));
        } else {
            dropped.push(curve.grid[i]);
        }
    }
    if xs.len() < 2 {
        return Err(ExperimentError::Tail(crate::tail::TailError::NotEnoughPoints(
            xs.len(),
        )));
    }
    let fit = crate::stats::weighted_least_squares(&xs, &ys, &sig)
        .ok_or(crate::tail::TailError::NotEnoughPoints(xs.len()))?;
    curve.fitted_slope = fit.slope;
    curve.slope_stderr = fit.slope_stderr;
    curve.intercept = fit.intercept;
    curve.intercept_stderr = fit.intercept_stderr;
    curve.dropped = dropped;
    Ok(curve)
}

pub fn run_theorem1_study(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
) -> Result<ComparisonReport, ExperimentError> {
    let law = cfg.validated_law()?;
    let policy = cfg.forced_jump_policy();
    let x = &cfg.start.coords;
    let x2 = &cfg.start.second;
    let stream = RngStream::named(cfg.seed, "theorem1");
    let mut criteria = Vec::new();

    // heavy-tail curve at the primary start
    eprintln!("tail curve at the primary start");
    let curve = curve_with_scaled_budgets(
        x,
        &law,
        &cfg.grids.horizons,
        &policy,
        cfg.budgets.tail_samples_per_point,
        stream.named_substream("curve-a"),
    )?;
    write_text(&paths.file("tail_curve.csv"), &tail_curve_csv(&curve))?;
    write_text(
        &paths.file("tail_curve.dat"),
        &plot_data(
            "log10(n) log10(p_hat)",
            &curve
                .grid
                .iter()
                .zip(&curve.estimates)
                .map(|(&n, e)| ((n as f64).log10(), e.value.log10()))
                .collect::<Vec<_>>(),
        ),
    )?;

    let expect = -theory_exponent(cfg.params.k, cfg.params.alpha);
    criteria.push(CriterionResult::new(
        "heavy-tail-exponent",
        (curve.fitted_slope - expect).abs() <= SLOPE_TOL,
        curve.fitted_slope,
        format!("{expect:.3} +- {SLOPE_TOL}"),
        format!(
            "slope stderr {:.4}, dropped {:?}",
            curve.slope_stderr, curve.dropped
        ),
    ));

    // bounded-increment control: three walks, direct Monte Carlo
    eprintln!("bounded-increment control");
    let light_law = build_law(cfg.params.alpha, 0.0, 0.0, cfg.params.body_cut)?;
    let light_x = [0.0, 1.0, 2.0];
    let light_ests = survival_grid_mc(
        &light_x,
        &light_law,
        &cfg.grids.light_horizons,
        cfg.budgets.light_tail_samples,
        SubWalkSelector::Full,
        stream.named_substream("light"),
    )?;
    let light_curve = refit(TailCurve {
        grid: cfg.grids.light_horizons.clone(),
        estimates: light_ests.clone(),
        methods: vec![Method::Direct; light_ests.len()],
        ess: light_ests.iter().map(|e| e.samples as f64).collect(),
        fitted_slope: 0.0,
        slope_stderr: 0.0,
        intercept: 0.0,
        intercept_stderr: 0.0,
        dropped: Vec::new(),
    })?;
    write_text(
        &paths.file("light_curve.csv"),
        &tail_curve_csv(&light_curve),
    )?;
    let light_expect = -(3.0 * 2.0) / 4.0;
    criteria.push(CriterionResult::new(
        "light-tail-control",
        (light_curve.fitted_slope - light_expect).abs() <= LIGHT_SLOPE_TOL,
        light_curve.fitted_slope,
        format!("{light_expect:.2} +- {LIGHT_SLOPE_TOL}"),
        format!("slope stderr {:.4}", light_curve.slope_stderr),
    ));

    // importance-sampling validity at a small horizon
    eprintln!("small-horizon cross-check");
    let n_small = 16;
    let direct = estimate_survival(
        x,
        &law,
        n_small,
        Method::Direct,
        &policy,
        cfg.budgets.cross_check_samples,
        stream.named_substream("cross-direct"),
    )?;
    let forced = estimate_survival(
        x,
        &law,
        n_small,
        Method::ForcedJump,
        &policy,
        cfg.budgets.cross_check_samples,
        stream.named_substream("cross-forced"),
    )?;
    let joint = (direct.est.stderr.powi(2) + forced.est.stderr.powi(2)).sqrt();
    criteria.push(CriterionResult::new(
        "is-cross-check",
        (direct.est.value - forced.est.value).abs() <= 3.0 * joint,
        (direct.est.value - forced.est.value) / joint,
        "|direct - forced| <= 3 joint stderr",
        format!(
            "direct {:.4e} forced {:.4e} joint {:.2e}",
            direct.est.value, forced.est.value, joint
        ),
    ));
    // degenerate mixture reduces to the direct estimator bit for bit
    let shared = stream.named_substream("degenerate-pair");
    let a = estimate_survival(x, &law, n_small, Method::Direct, &policy, 200_000, shared)?;
    let degenerate = crate::tail::ForcedJumpPolicy {
        defensive_mix: 1.0,
        ..policy
    };
    let b = estimate_survival(
        x,
        &law,
        n_small,
        Method::ForcedJump,
        &degenerate,
        200_000,
        shared,
    )?;
    criteria.push(CriterionResult::new(
        "is-degenerate-bitwise",
        a.est.value.to_bits() == b.est.value.to_bits(),
        (a.est.value - b.est.value).abs(),
        "bit-identical",
        String::new(),
    ));

    // intercept consistency across two starts
    eprintln!("second-start curve and intercepts");
    let curve2 = curve_with_scaled_budgets(
        x2,
        &law,
        &cfg.grids.horizons,
        &policy,
        cfg.budgets.tail_samples_per_point,
        stream.named_substream("curve-b"),
    )?;
    let vcache: VCache = vcache_for(cfg, &law)?;
    let series_policy = SeriesSamplingPolicy::default();
    let u1 = estimate_u(
        x,
        &law,
        &vcache,
        cfg.budgets.u_series_truncation,
        cfg.budgets.u_series_samples,
        stream.named_substream("u-a"),
        Some(&series_policy),
        None,
    )?
    .total_estimate();
    let u2 = estimate_u(
        x2,
        &law,
        &vcache,
        cfg.budgets.u_series_truncation,
        cfg.budgets.u_series_samples,
        stream.named_substream("u-b"),
        Some(&series_policy),
        None,
    )?
    .total_estimate();
    let report = compare_intercept(&[(&curve, &u1), (&curve2, &u2)]);
    criteria.push(CriterionResult::new(
        "intercept-consistency",
        report.consistent,
        report.ratio_matrix[0][1].0,
        "theta ratio = 1 within 3 joint stderr",
        format!(
            "theta_a {:.4e} theta_b {:.4e} rel se {:.3}",
            report.theta_hats[0].0, report.theta_hats[1].0, report.ratio_matrix[0][1].1
        ),
    ));

    let values = json!({
        "slope": curve.fitted_slope,
        "slope_stderr": curve.slope_stderr,
        "theory_exponent": theory_exponent(cfg.params.k, cfg.params.alpha),
        "intercept": curve.intercept,
        "light_slope": light_curve.fitted_slope,
        "u_primary": u1,
        "u_second": u2,
        "theta_hats": report.theta_hats,
        "curve_second_slope": curve2.fitted_slope,
    });
    let report = ComparisonReport {
        experiment: "theorem1".into(),
        seed: cfg.seed,
        criteria,
        values,
        config: cfg.clone(),
    };
    super::report::write_json(&paths.file("report.json"), &report)?;
    Ok(report)
}
