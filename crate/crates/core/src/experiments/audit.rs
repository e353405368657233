//! Kernel audit: branch-probability mass, substochasticity margin,
//! stratum absorption, mixture-weight identities, and the killed-chain
//! lifetime law against the time-to-freeze law.

use serde_json::json;

use crate::chain::{kernel_branch_probs, killed_chain_lifetime, freeze_times, run_chain};
use crate::domain::CompactPoint;
use crate::harmonic::mixture_weights;
use crate::rng::{open01, RngStream};
use crate::stats::ks_two_sample;

use super::config::ExperimentConfig;
use super::report::{write_json, write_text, ComparisonReport, CriterionResult, RunPaths};
use super::ExperimentError;

/// Absolute tolerance on the kernel mass at each panel state.
pub const MASS_ABS_TOL: f64 = 0.01;
/// Cap-survival bound for the killed chain.
pub const LIFETIME_CAP_FRACTION: f64 = 1e-3;
/// KS tolerance between killed lifetimes and freeze times.
pub const LIFETIME_KS_TOL: f64 = 0.05;

/// Deterministic panel of audit states around the configured start: the
/// start itself, a mirror-symmetric state, and seeded jittered variants.
pub fn panel_states(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    let k = cfg.params.k;
    let mut states = vec![cfg.start.coords.clone()];
    // mirror-symmetric state for the symmetry checks
    let span = (k - 1) as f64;
    states.push((0..k).map(|i| i as f64 - span / 2.0).collect());
    let mut rng = RngStream::named(cfg.seed, "audit-panel").rng();
    while states.len() < cfg.budgets.kernel_panel_states {
        let mut x = vec![0.0; k];
        let mut acc = 0.0;
        for v in x.iter_mut() {
            *v = acc;
            acc += 0.4 + 4.0 * open01(&mut rng).powi(2);
        }
        states.push(x);
    }
    states
}

pub fn run_kernel_audit(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    cache_root: Option<&std::path::Path>,
) -> Result<ComparisonReport, ExperimentError> {
    let law = cfg.validated_law()?;
    let ctx = super::context_for_at(cfg, &law, cache_root)?;
    let stream = RngStream::named(cfg.seed, "audit");
    let mut criteria = Vec::new();
    let states = panel_states(cfg);

    // per-state kernel mass and substochastic margin
    let mut csv = String::from(
        "state,stay,stay_se,freeze_top,freeze_bottom,mass,mass_se,series_ratio,series_ratio_se\n",
    );
    let mut worst_mass_dev = 0.0f64;
    let mut mass_all_pass = true;
    let mut stay_margin_pass = true;
    let mut series_all_pass = true;
    let mut panel_rows = Vec::new();
    for (i, x) in states.iter().enumerate() {
        eprintln!("panel state {} / {}", i + 1, states.len());
        let probs = kernel_branch_probs(
            x,
            &ctx,
            cfg.budgets.u_series_truncation,
            cfg.budgets.kernel_panel_samples,
            stream.named_substream("panel").substream(i as u64),
        )?;
        let (mass, mass_se) = probs.mass();
        let dev = (mass - 1.0).abs();
        worst_mass_dev = worst_mass_dev.max(dev);
        if dev > (3.0 * mass_se).max(1e-12) || dev > MASS_ABS_TOL {
            mass_all_pass = false;
        }
        if !(probs.stay.value < 1.0 - 3.0 * probs.stay.stderr) {
            stay_margin_pass = false;
        }
        let (ratio, ratio_se) = probs.series_consistency();
        if (ratio - 1.0).abs() > 3.0 * ratio_se {
            series_all_pass = false;
        }
        csv.push_str(&format!(
            "\"{:?}\",{},{},{},{},{},{},{},{}\n",
            x,
            probs.stay.value,
            probs.stay.stderr,
            probs.freeze_top.value,
            probs.freeze_bottom.value,
            mass,
            mass_se,
            ratio,
            ratio_se
        ));
        panel_rows.push(json!({
            "state": x,
            "stay": probs.stay,
            "freeze_top": probs.freeze_top,
            "freeze_bottom": probs.freeze_bottom,
            "mass": mass,
            "mass_se": mass_se,
            "u_cached": probs.u_cached,
            "series_ratio": ratio,
        }));
    }
    write_text(&paths.file("kernel_panel.csv"), &csv)?;
    criteria.push(CriterionResult::new(
        "kernel-mass",
        mass_all_pass,
        worst_mass_dev,
        format!("|mass - 1| <= min(3 se, {MASS_ABS_TOL}) at every panel state"),
        format!("{} states", states.len()),
    ));
    criteria.push(CriterionResult::new(
        "substochastic-margin",
        stay_margin_pass,
        if stay_margin_pass { 1.0 } else { 0.0 },
        "stay < 1 - 3 stderr at every panel state",
        String::new(),
    ));
    criteria.push(CriterionResult::new(
        "series-consistency",
        series_all_pass,
        if series_all_pass { 1.0 } else { 0.0 },
        "independent series estimates agree within 3 joint stderr",
        String::new(),
    ));

    // mixture-weight identities at the start and the symmetric state
    let w_start = mixture_weights(
        &states[0],
        &law,
        &ctx.vcache,
        cfg.budgets.u_series_truncation,
        cfg.budgets.u_series_samples,
        stream.named_substream("weights-start"),
    )?;
    let sum_dev = (w_start.p_of_x.value + w_start.q_of_x.value - 1.0).abs();
    criteria.push(CriterionResult::new(
        "mixture-weights-sum",
        sum_dev <= 2.0 * (w_start.p_of_x.stderr + w_start.q_of_x.stderr).max(1e-12),
        w_start.p_of_x.value + w_start.q_of_x.value,
        "p(x) + q(x) = 1 within 2 propagated stderr",
        format!("p {:.4} q {:.4}", w_start.p_of_x.value, w_start.q_of_x.value),
    ));
    let symmetric_applicable = (cfg.params.p - cfg.params.q).abs() < 1e-12;
    if symmetric_applicable {
        let w_sym = mixture_weights(
            &states[1],
            &law,
            &ctx.vcache,
            cfg.budgets.u_series_truncation,
            cfg.budgets.u_series_samples,
            stream.named_substream("weights-sym"),
        )?;
        criteria.push(CriterionResult::new(
            "mixture-weights-symmetric",
            (w_sym.p_of_x.value - 0.5).abs() <= 3.0 * w_sym.p_of_x.stderr,
            w_sym.p_of_x.value,
            "0.5 +- 3 stderr at the mirror-symmetric state",
            format!("stderr {:.5}", w_sym.p_of_x.stderr),
        ));
    }

    // killed-chain lifetimes against freeze times
    eprintln!("killed-chain lifetimes");
    let lifetimes = killed_chain_lifetime(
        &states[0],
        &ctx,
        cfg.budgets.chain_samples,
        cfg.budgets.chain_step_cap,
        cfg.budgets.resample_batch,
        stream.named_substream("killed"),
    )?;
    eprintln!("freeze times");
    let freezes = freeze_times(
        &states[0],
        &ctx,
        cfg.budgets.chain_samples,
        cfg.budgets.chain_step_cap,
        cfg.budgets.resample_batch,
        stream.named_substream("freeze"),
    )?;
    let capped = lifetimes.iter().filter(|l| l.capped).count();
    let cap_fraction = capped as f64 / lifetimes.len() as f64;
    criteria.push(CriterionResult::new(
        "lifetime-cap-survival",
        cap_fraction < LIFETIME_CAP_FRACTION,
        cap_fraction,
        format!("< {LIFETIME_CAP_FRACTION}"),
        format!(
            "{} of {} runs reached the cap {}",
            capped,
            lifetimes.len(),
            cfg.budgets.chain_step_cap
        ),
    ));
    let killed_sample: Vec<f64> = lifetimes.iter().map(|l| l.lifetime as f64).collect();
    let freeze_sample: Vec<f64> = freezes.iter().map(|l| l.lifetime as f64).collect();
    let ks = ks_two_sample(&killed_sample, &freeze_sample);
    criteria.push(CriterionResult::new(
        "lifetime-freeze-ks",
        ks < LIFETIME_KS_TOL,
        ks,
        format!("KS < {LIFETIME_KS_TOL}"),
        format!("{} runs each", lifetimes.len()),
    ));
    let mut lt_csv = String::from("lifetime,capped\n");
    for l in &lifetimes {
        lt_csv.push_str(&format!("{},{}\n", l.lifetime, l.capped));
    }
    write_text(&paths.file("lifetimes.csv"), &lt_csv)?;

    // stratum absorption on a trajectory sample, plus an exported example
    let s0 = CompactPoint::interior(states[0].clone()).map_err(crate::harmonic::HarmonicError::Domain)?;
    let mut absorbed_ok = true;
    for t in 0..24 {
        let traj = run_chain(
            &s0,
            &ctx,
            80,
            cfg.budgets.resample_batch,
            stream.named_substream("chain").substream(t),
        )?;
        let freezes_seen = traj
            .steps
            .iter()
            .filter(|s| {
                matches!(
                    s.branch,
                    crate::chain::Branch::FreezeTop | crate::chain::Branch::FreezeBottom
                )
            })
            .count();
        if freezes_seen > 1 {
            absorbed_ok = false;
        }
        if let Some(fs) = traj.freeze_step {
            let kind = traj.steps[fs as usize - 1].to.frozen_kind();
            for step in &traj.steps[fs as usize..] {
                if step.to.frozen_kind() != kind {
                    absorbed_ok = false;
                }
            }
        }
        if t == 0 {
            write_text(
                &paths.file("trajectory_example.csv"),
                &crate::chain::trajectory_csv(&traj, cfg.params.k),
            )?;
        }
    }
    criteria.push(CriterionResult::new(
        "stratum-absorption",
        absorbed_ok,
        if absorbed_ok { 1.0 } else { 0.0 },
        "at most one freeze per trajectory; strata never change",
        "24 trajectories of 80 steps",
    ));

    let mean_life: f64 = killed_sample.iter().sum::<f64>() / killed_sample.len() as f64;
    let values = json!({
        "panel": panel_rows,
        "worst_mass_deviation": worst_mass_dev,
        "lifetime_mean": mean_life,
        "lifetime_cap_fraction": cap_fraction,
        "lifetime_freeze_ks": ks,
        "beta_global": ctx.beta_global,
        "vcache_spot_err": ctx.vcache.diagnostics.max_spot_rel_err,
    });
    let report = ComparisonReport {
        experiment: "audit".into(),
        seed: cfg.seed,
        criteria,
        values,
        config: cfg.clone(),
    };
    write_json(&paths.file("report.json"), &report)?;
    Ok(report)
}
