//! Command-line entry point: subcommands over one TOML configuration.
//!
//! Exit codes: 0 when every criterion passed, 1 when a criterion failed,
//! 2 on usage or configuration errors. Every run writes a manifest before
//! any computation (config hash, seed, versions), finalized with the wall
//! time at the end; reports and CSV artifacts contain only deterministic
//! content, so a re-run with the same seed and worker count reproduces
//! them byte for byte.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ordered_walks::bm::{estimate_psi_curve, simulate_dyson, theta_of_a, PsiConfig};
use ordered_walks::chain::{run_chain, trajectory_csv};
use ordered_walks::domain::{validate_params, CompactPoint};
use ordered_walks::experiments::{
    context_for_at, run_kernel_audit, run_theorem1_study, run_theorem2_study, vcache_for,
    ComparisonReport, ExperimentConfig, Manifest, RunPaths,
};
use ordered_walks::harmonic::{estimate_u, estimate_v, mixture_weights, SeriesSamplingPolicy, StabilizePolicy};
use ordered_walks::rng::RngStream;
use ordered_walks::tail::{build_tail_curve, Method};

/// Environment variable holding the default output directory.
const OUTDIR_ENV: &str = "ORDERED_WALKS_OUTDIR";

#[derive(Parser)]
#[command(
    name = "ordered-walks",
    version,
    about = "Simulation and estimation toolkit for ordered random walks with heavy-tailed increments"
)]
struct Cli {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-key overrides, e.g. --set params.alpha=2.6 (repeatable).
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    /// Seed override (takes precedence over the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count; 0 means the hardware default.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (precedence: flag, then config, then
    /// ORDERED_WALKS_OUTDIR, then ./runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress reporting on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the configuration and the parameter window.
    Validate,
    /// Survival curve over the horizon grid with a log-log slope fit.
    Tail,
    /// Harmonic-function and Green-series estimates at the start state.
    Harmonic,
    /// Conditioned-chain trajectories and freeze statistics.
    Chain,
    /// Ordered Brownian motion paths and spread statistics.
    Dyson,
    /// Clearance curve, tail integral and jump-size density table.
    Psi,
    /// Exit-time tail study (slope, control run, intercepts).
    Theorem1,
    /// Conditional functional-limit study at a fixed horizon.
    Theorem2,
    /// Kernel mass, absorption, mixture-weight and lifetime audit.
    Audit,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Tail => "tail",
            Command::Harmonic => "harmonic",
            Command::Chain => "chain",
            Command::Dyson => "dyson",
            Command::Psi => "psi",
            Command::Theorem1 => "theorem1",
            Command::Theorem2 => "theorem2",
            Command::Audit => "audit",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(all_pass) => {
            if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base
        .with_overrides(&cli.overrides)
        .map_err(|e| e.to_string())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn resolve_outdir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTDIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run(cli: Cli) -> Result<bool, String> {
    let cfg = load_config(&cli)?;
    let workers = if cfg.workers == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        cfg.workers
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .ok(); // a second invocation in-process keeps the first pool

    if matches!(cli.command, Command::Validate) {
        let params = cfg.walk_params();
        validate_params(&params).map_err(|e| format!("core-domain/validate_params: {e}"))?;
        cfg.validated_law()
            .map_err(|e| format!("increments/build_law: {e}"))?;
        println!(
            "configuration valid: k = {}, alpha = {}, p = {}, q = {}, body_cut = {}, seed = {}",
            cfg.params.k, cfg.params.alpha, cfg.params.p, cfg.params.q, cfg.params.body_cut, cfg.seed
        );
        return Ok(true);
    }

    let root = resolve_outdir(&cfg);
    let name = cli.command.name();
    let paths = RunPaths::new(&root, name).map_err(|e| e.to_string())?;
    let mut manifest = Manifest::begin(name, &cfg, workers);
    paths.write_manifest(&manifest).map_err(|e| e.to_string())?;
    let started = Instant::now();
    if !cli.quiet {
        eprintln!(
            "[{name}] seed {} workers {workers} out {}",
            cfg.seed,
            paths.dir.display()
        );
    }

    let outcome = dispatch(&cli.command, &cfg, &paths, &root, cli.quiet);

    manifest.wall_time_ms = Some(started.elapsed().as_millis());
    manifest.outcome = Some(match &outcome {
        Ok(true) => "pass".into(),
        Ok(false) => "criterion-failure".into(),
        Err(e) => format!("error: {e}"),
    });
    paths.write_manifest(&manifest).map_err(|e| e.to_string())?;
    outcome
}

fn print_report(report: &ComparisonReport) -> bool {
    report.print_lines();
    report.all_pass()
}

fn dispatch(
    cmd: &Command,
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    root: &std::path::Path,
    quiet: bool,
) -> Result<bool, String> {
    let law = cfg
        .validated_law()
        .map_err(|e| format!("increments/build_law: {e}"))?;
    match cmd {
        Command::Validate => unreachable!("handled before dispatch"),
        Command::Tail => {
            let policy = cfg.forced_jump_policy();
            let curve = build_tail_curve(
                &cfg.start.coords,
                &law,
                &cfg.grids.horizons,
                Method::ForcedJump,
                &policy,
                cfg.budgets.tail_samples_per_point,
                RngStream::named(cfg.seed, "tail"),
            )
            .map_err(|e| format!("tail-estimator/build_tail_curve: {e}"))?;
            ordered_walks::experiments::write_text(
                &paths.file("tail_curve.csv"),
                &ordered_walks::experiments::tail_curve_csv(&curve),
            )
            .map_err(|e| e.to_string())?;
            let summary = serde_json::json!({
                "slope": curve.fitted_slope,
                "slope_stderr": curve.slope_stderr,
                "intercept": curve.intercept,
                "theory_exponent": ordered_walks::domain::theory_exponent(cfg.params.k, cfg.params.alpha),
                "verdict": (curve.fitted_slope + ordered_walks::domain::theory_exponent(cfg.params.k, cfg.params.alpha)).abs() <= ordered_walks::experiments::SLOPE_TOL,
                "dropped": curve.dropped,
            });
            ordered_walks::experiments::write_json(&paths.file("summary.json"), &summary)
                .map_err(|e| e.to_string())?;
            println!(
                "slope {:.4} +- {:.4} (closed-form exponent {:.4})",
                curve.fitted_slope,
                curve.slope_stderr,
                -ordered_walks::domain::theory_exponent(cfg.params.k, cfg.params.alpha)
            );
            Ok(summary["verdict"].as_bool().unwrap_or(false))
        }
        Command::Harmonic => {
            let x = &cfg.start.coords;
            let k = x.len();
            let stream = RngStream::named(cfg.seed, "harmonic");
            let stab = StabilizePolicy::default();
            let v1 = estimate_v(&x[..k - 1], &law, &stab, cfg.budgets.u_series_samples / 2, stream.named_substream("v1"))
                .map_err(|e| format!("harmonic/estimate_V: {e}"))?;
            let v2 = estimate_v(&x[1..], &law, &stab, cfg.budgets.u_series_samples / 2, stream.named_substream("v2"))
                .map_err(|e| format!("harmonic/estimate_V: {e}"))?;
            let vcache = vcache_for(cfg, &law).map_err(|e| e.to_string())?;
            let series = estimate_u(
                x,
                &law,
                &vcache,
                cfg.budgets.u_series_truncation,
                cfg.budgets.u_series_samples,
                stream.named_substream("useries"),
                Some(&SeriesSamplingPolicy::default()),
                None,
            )
            .map_err(|e| format!("harmonic/estimate_U: {e}"))?;
            let weights = mixture_weights(
                x,
                &law,
                &vcache,
                cfg.budgets.u_series_truncation,
                cfg.budgets.u_series_samples,
                stream.named_substream("weights"),
            )
            .map_err(|e| format!("harmonic/mixture_weights: {e}"))?;
            let mut csv = String::from("term,value,stderr,support\n");
            for (l, t) in series.terms.iter().enumerate() {
                csv.push_str(&format!("{l},{},{},{}\n", t.value, t.stderr, series.support[l]));
            }
            ordered_walks::experiments::write_text(&paths.file("u_terms.csv"), &csv)
                .map_err(|e| e.to_string())?;
            let summary = serde_json::json!({
                "v1": v1, "v2": v2,
                "u_total": series.total, "u_total_stderr": series.total_stderr,
                "tail_fraction": series.tail_fraction,
                "beta_hat": series.beta_hat,
                "p_of_x": weights.p_of_x, "q_of_x": weights.q_of_x,
            });
            ordered_walks::experiments::write_json(&paths.file("summary.json"), &summary)
                .map_err(|e| e.to_string())?;
            println!(
                "v1 {:.4} +- {:.4} | v2 {:.4} +- {:.4} | U {:.4} +- {:.4} | p(x) {:.4} +- {:.4}",
                v1.value, v1.stderr, v2.value, v2.stderr, series.total, series.total_stderr,
                weights.p_of_x.value, weights.p_of_x.stderr
            );
            Ok(true)
        }
        Command::Chain => {
            let ctx = context_for_at(cfg, &law, Some(root)).map_err(|e| e.to_string())?;
            let s0 = CompactPoint::interior(cfg.start.coords.clone())
                .map_err(|e| format!("core-domain/CompactPoint: {e}"))?;
            let mut frozen_top = 0u64;
            let mut frozen_bottom = 0u64;
            let trajectories = (cfg.budgets.chain_samples / 100).clamp(10, 200);
            for t in 0..trajectories {
                let traj = run_chain(
                    &s0,
                    &ctx,
                    200,
                    cfg.budgets.resample_batch,
                    RngStream::named(cfg.seed, "chain").substream(t),
                )
                .map_err(|e| format!("conditioned-chain/run_chain: {e}"))?;
                if let Some(fs) = traj.freeze_step {
                    match traj.steps[fs as usize - 1].branch {
                        ordered_walks::chain::Branch::FreezeTop => frozen_top += 1,
                        ordered_walks::chain::Branch::FreezeBottom => frozen_bottom += 1,
                        _ => {}
                    }
                }
                if t == 0 {
                    ordered_walks::experiments::write_text(
                        &paths.file("trajectory.csv"),
                        &trajectory_csv(&traj, cfg.params.k),
                    )
                    .map_err(|e| e.to_string())?;
                }
                if !quiet && (t + 1) % 20 == 0 {
                    eprintln!("trajectory {}/{trajectories}", t + 1);
                }
            }
            println!(
                "{trajectories} trajectories: {frozen_top} froze top, {frozen_bottom} froze bottom"
            );
            Ok(true)
        }
        Command::Dyson => {
            let dim = cfg.params.k - 1;
            let mut spread_ratio = ordered_walks::stats::OnlineStats::default();
            for i in 0..cfg.budgets.dyson_paths {
                let path = simulate_dyson(
                    dim,
                    1.0,
                    1.0 / 256.0,
                    None,
                    RngStream::named(cfg.seed, "dyson").substream(i).rng(),
                )
                .map_err(|e| format!("bm-reference/simulate_dyson: {e}"))?;
                let spread = |xs: &[f64]| {
                    let m = xs.iter().sum::<f64>() / xs.len() as f64;
                    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
                };
                let quarter = path.times.len() / 4;
                spread_ratio.add(spread(path.at(path.times.len() - 1)) / spread(path.at(quarter)).max(1e-12));
            }
            let summary = serde_json::json!({
                "paths": cfg.budgets.dyson_paths,
                "mean_spread_ratio_t1_vs_quarter": spread_ratio.mean(),
            });
            ordered_walks::experiments::write_json(&paths.file("summary.json"), &summary)
                .map_err(|e| e.to_string())?;
            println!(
                "{} paths, mean squared-spread ratio t=1 vs t=1/4: {:.3}",
                cfg.budgets.dyson_paths,
                spread_ratio.mean()
            );
            Ok(true)
        }
        Command::Psi => {
            let psi_cfg = PsiConfig {
                paths: cfg.budgets.psi_paths,
                ..Default::default()
            };
            let curve = estimate_psi_curve(
                cfg.params.k,
                &cfg.grids.r_grid,
                &cfg.grids.a_grid,
                &psi_cfg,
                RngStream::named(cfg.seed, "psi"),
            )
            .map_err(|e| format!("bm-reference/estimate_psi: {e}"))?;
            let mut csv = String::from("r");
            for a in &curve.a_grid {
                csv.push_str(&format!(",psi_a_{a}"));
            }
            csv.push_str(",psi_extrapolated,stderr\n");
            for (ri, &r) in curve.r_grid.iter().enumerate() {
                csv.push_str(&format!("{r}"));
                for ai in 0..curve.a_grid.len() {
                    csv.push_str(&format!(",{}", curve.values[ai][ri]));
                }
                csv.push_str(&format!(
                    ",{},{}\n",
                    curve.extrapolated[ri], curve.extrapolated_stderr[ri]
                ));
            }
            ordered_walks::experiments::write_text(&paths.file("psi_curve.csv"), &csv)
                .map_err(|e| e.to_string())?;
            let theta = theta_of_a(0.0, &curve, cfg.params.alpha, cfg.params.p);
            let f = ordered_walks::bm::TabulatedF::from_psi(&curve, cfg.params.alpha)
                .map_err(|e| format!("bm-reference/TabulatedF: {e}"))?;
            let mut fcsv = String::from("y,f_density,f_cdf\n");
            let mut y = curve.r_grid[0] / 4.0;
            while y < curve.r_grid[curve.r_grid.len() - 1] * 2.0 {
                fcsv.push_str(&format!("{y},{},{}\n", f.density(y), f.cdf(y)));
                y *= 1.1;
            }
            ordered_walks::experiments::write_text(&paths.file("f_table.csv"), &fcsv)
                .map_err(|e| e.to_string())?;
            ordered_walks::experiments::write_json(
                &paths.file("summary.json"),
                &serde_json::json!({ "theta": theta, "denominators": curve.denominator_probs }),
            )
            .map_err(|e| e.to_string())?;
            println!(
                "theta(0) = {:.5} in [{:.5}, {:.5}]",
                theta.value, theta.lower, theta.upper
            );
            Ok(true)
        }
        Command::Theorem1 => {
            let report = run_theorem1_study(cfg, paths).map_err(|e| format!("experiments/run_theorem1_study: {e}"))?;
            Ok(print_report(&report))
        }
        Command::Theorem2 => {
            let report = run_theorem2_study(cfg, paths).map_err(|e| format!("experiments/run_theorem2_study: {e}"))?;
            Ok(print_report(&report))
        }
        Command::Audit => {
            let report = run_kernel_audit(cfg, paths, Some(root))
                .map_err(|e| format!("experiments/run_kernel_audit: {e}"))?;
            Ok(print_report(&report))
        }
    }
}
