//! Batch command-line front end: simulate benchmark datasets, run Monte
//! Carlo comparisons, fit and predict on user data, extract diurnal
//! L-moment curves, and run the pseudo-variable specificity experiment.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 numerical failure or
//! exceeded replicate-failure budget.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vsflqr_core::error::Error;
use vsflqr_core::io;
use vsflqr_core::lmoments::{diurnal_lmoments, LMomentCurves};
use vsflqr_core::model::{fit, predict, selected_variables, FitConfig, MethodKind};
use vsflqr_core::simbench::{
    generate_scenario, pseudo_variable_experiment, run_monte_carlo_logged,
    true_quantile_coefficients, DesignKind, PseudoConfig, ScenarioConfig, SimDataset,
    DENSE_GRID_M,
};

mod config;
use config::ConfigFile;

#[derive(Parser)]
#[command(
    name = "vsflqr",
    about = "Variable selection for functional linear quantile regression",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated benchmark dataset (scalars, functional curves,
    /// response, and ground truth).
    Simulate(SimulateArgs),
    /// Fit a model to CSV data and write the model, selection report, and
    /// coefficient curves.
    Fit(FitArgs),
    /// Predict conditional quantiles for new data from a fitted model.
    Predict(PredictArgs),
    /// Run the Monte Carlo benchmark and write metric reports.
    Mc(McArgs),
    /// Extract diurnal L-moment curves from minute-level activity data.
    Lmoments(LmomentsArgs),
    /// Run the pseudo-variable specificity experiment on an hours-domain
    /// dataset.
    Pseudo(PseudoArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// dense or sparse
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// JSON config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    scalars: PathBuf,
    #[arg(long)]
    functional: PathBuf,
    #[arg(long)]
    response: PathBuf,
    /// vsflqr, rq-glasso, or ls-glasso
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    pve: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    n_lambda: Option<usize>,
    #[arg(long)]
    lambda_min_ratio: Option<f64>,
    /// Domain endpoints for the functional grid (default: observed range).
    #[arg(long)]
    domain_min: Option<f64>,
    #[arg(long)]
    domain_max: Option<f64>,
    /// Evaluation grid size when samples are irregular (default 101).
    #[arg(long)]
    grid_m: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scalars: PathBuf,
    #[arg(long)]
    functional: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated list: vsflqr,rq-glasso,ls-glasso
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    pve: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Also write a per-replicate log CSV.
    #[arg(long)]
    replicate_log: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct LmomentsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Window half-width in hours (default 5 minutes = 0.0833333).
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PseudoArgs {
    #[arg(long)]
    scalars: PathBuf,
    #[arg(long)]
    functional: PathBuf,
    #[arg(long)]
    response: PathBuf,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    n_pseudo: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Amplitude standard deviation of the pseudo-curves (0 gives exactly
    /// zero curves; useful for testing).
    #[arg(long)]
    pseudo_amplitude_sd: Option<f64>,
    #[arg(long)]
    pve: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Fit(args) => run_fit(args),
        Command::Predict(args) => run_predict(args),
        Command::Mc(args) => run_mc(args),
        Command::Lmoments(args) => run_lmoments(args),
        Command::Pseudo(args) => run_pseudo(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

/// Ground-truth sidecar written by `simulate`.
#[derive(serde::Serialize)]
struct TruthFile {
    n: usize,
    tau: f64,
    design: String,
    seed: u64,
    test_fraction: f64,
    grid_m: usize,
    truth: vsflqr_core::simbench::TrueModel,
    active_scalars: Vec<usize>,
    active_functional: Vec<usize>,
    beta_tau: Vec<f64>,
    gamma_tau_grid: Vec<f64>,
    gamma_tau: Vec<Vec<f64>>,
}

fn scenario_from(
    n: Option<usize>,
    tau: Option<f64>,
    design: Option<String>,
    seed: Option<u64>,
    cfg: &ConfigFile,
) -> Result<ScenarioConfig, Error> {
    let n = n.or(cfg.get_usize("n")?).unwrap_or(400);
    let tau = tau.or(cfg.get_f64("tau")?).unwrap_or(0.5);
    let design_str = design
        .or(cfg.get_string("design")?)
        .unwrap_or_else(|| "dense".to_string());
    let design = DesignKind::parse(&design_str)?;
    let seed = seed.or(cfg.get_u64("seed")?).unwrap_or(1);
    Ok(ScenarioConfig::new(n, tau, design, seed))
}

fn run_simulate(args: SimulateArgs) -> Result<(), Error> {
    let cfg = ConfigFile::load(args.config.as_deref(), &["n", "tau", "design", "seed"])?;
    let scenario_cfg = scenario_from(args.n, args.tau, args.design, args.seed, &cfg)?;
    let scenario = generate_scenario(&scenario_cfg)?;
    let train = &scenario.train;

    io::write_scalar_csv(&args.out.join("scalars.csv"), &train.scalars)?;
    io::write_functional_csv(&args.out.join("functional.csv"), &train.functional)?;
    io::write_response_csv(
        &args.out.join("response.csv"),
        &train.scalars.subject_ids,
        &train.y,
    )?;

    let grid = train.functional[0].common_grid.clone();
    let (beta_tau, gamma_tau) =
        true_quantile_coefficients(&scenario.truth, scenario_cfg.tau, &grid)?;
    let truth = TruthFile {
        n: scenario_cfg.n,
        tau: scenario_cfg.tau,
        design: scenario_cfg.design.name().to_string(),
        seed: scenario_cfg.seed,
        test_fraction: scenario_cfg.test_fraction,
        grid_m: DENSE_GRID_M,
        active_scalars: scenario.truth.active_scalars(),
        active_functional: scenario.truth.active_functional(),
        truth: scenario.truth,
        beta_tau,
        gamma_tau_grid: grid,
        gamma_tau,
    };
    io::write_json(&args.out.join("truth.json"), &truth)?;
    println!(
        "simulated n={} tau={} design={} seed={} -> {}",
        scenario_cfg.n,
        scenario_cfg.tau,
        scenario_cfg.design.name(),
        scenario_cfg.seed,
        args.out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit_config_from(
    pve: Option<f64>,
    gamma: Option<f64>,
    phi: Option<f64>,
    n_lambda: Option<usize>,
    lambda_min_ratio: Option<f64>,
    cfg: &ConfigFile,
    default_pve: f64,
) -> Result<FitConfig, Error> {
    let mut out = FitConfig::default();
    out.pve = pve.or(cfg.get_f64("pve")?).unwrap_or(default_pve);
    out.gamma = gamma.or(cfg.get_f64("gamma")?).unwrap_or(out.gamma);
    out.phi = phi.or(cfg.get_f64("phi")?).unwrap_or(out.phi);
    out.n_lambda = n_lambda
        .or(cfg.get_usize("n_lambda")?)
        .unwrap_or(out.n_lambda);
    out.min_ratio = lambda_min_ratio.or(cfg.get_f64("lambda_min_ratio")?);
    Ok(out)
}

type FitInputs = (
    vsflqr_core::model::ScalarData,
    Vec<vsflqr_core::funcdata::FunctionalDataset>,
    Vec<f64>,
);

fn load_fit_inputs(
    scalars: &Path,
    functional: &Path,
    response: &Path,
    grid: io::GridSpec,
) -> Result<FitInputs, Error> {
    let scalar_data = io::read_scalar_csv(scalars)?;
    let functional_data = io::read_functional_csv(functional, &grid)?;
    let (ids, y) = io::read_response_csv(response)?;
    if ids != scalar_data.subject_ids {
        return Err(Error::SubjectMismatch(
            "response.csv and scalars.csv must list the same subjects in the same order".into(),
        ));
    }
    Ok((scalar_data, functional_data, y))
}

fn run_fit(args: FitArgs) -> Result<(), Error> {
    let cfg = ConfigFile::load(
        args.config.as_deref(),
        &[
            "method",
            "tau",
            "pve",
            "gamma",
            "phi",
            "n_lambda",
            "lambda_min_ratio",
            "domain_min",
            "domain_max",
            "grid_m",
        ],
    )?;
    let method_str = args
        .method
        .or(cfg.get_string("method")?)
        .unwrap_or_else(|| "vsflqr".to_string());
    let method = MethodKind::parse(&method_str)?;
    let tau = args.tau.or(cfg.get_f64("tau")?).unwrap_or(0.5);
    let fit_cfg = fit_config_from(
        args.pve,
        args.gamma,
        args.phi,
        args.n_lambda,
        args.lambda_min_ratio,
        &cfg,
        0.95,
    )?;
    let domain_min = args.domain_min.or(cfg.get_f64("domain_min")?);
    let domain_max = args.domain_max.or(cfg.get_f64("domain_max")?);
    let grid = io::GridSpec {
        domain: match (domain_min, domain_max) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidParam {
                    name: "domain",
                    reason: "provide both --domain-min and --domain-max or neither".into(),
                })
            }
        },
        m: args.grid_m.or(cfg.get_usize("grid_m")?),
    };

    let (scalar_data, functional_data, y) =
        load_fit_inputs(&args.scalars, &args.functional, &args.response, grid)?;
    let model = fit(&scalar_data, &functional_data, &y, tau, method, &fit_cfg)?;
    let report = selected_variables(&model);

    io::write_model_json(&args.out.join("model.json"), &model)?;
    io::write_selection_csv(&args.out.join("selection.csv"), &model, &report)?;
    io::write_gamma_curves_csv(&args.out.join("curves.csv"), &model)?;
    println!(
        "fitted {} at tau={}: nu={} lambda={:.6} ebic={:.4}; selected scalars [{}] functional [{}]",
        method,
        tau,
        report.nu,
        report.lambda,
        report.ebic,
        report.scalars.join(", "),
        report.functional.join(", ")
    );
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<(), Error> {
    ConfigFile::load(args.config.as_deref(), &[])?;
    let model = io::read_model_json(&args.model)?;
    let scalar_data = io::read_scalar_csv(&args.scalars)?;
    // Parse with the model's domain so sparse new samples interpolate onto
    // the training grid.
    let domain = model
        .covariates
        .first()
        .map(|c| c.domain)
        .unwrap_or((0.0, 1.0));
    let spec = io::GridSpec {
        domain: Some(domain),
        m: Some(
            model
                .covariates
                .first()
                .map(|c| c.eigen.grid.len())
                .unwrap_or(101),
        ),
    };
    let functional_data = io::read_functional_csv(&args.functional, &spec)?;
    let predictions = predict(&model, &scalar_data, &functional_data)?;
    io::write_predictions_csv(
        &args.out.join("predictions.csv"),
        &scalar_data.subject_ids,
        model.tau,
        &predictions,
    )?;
    println!(
        "predicted {} subjects at tau={} -> {}",
        predictions.len(),
        model.tau,
        args.out.join("predictions.csv").display()
    );
    Ok(())
}

fn parse_methods(text: &str) -> Result<Vec<MethodKind>, Error> {
    let mut methods = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        methods.push(MethodKind::parse(part)?);
    }
    if methods.is_empty() {
        return Err(Error::InvalidParam {
            name: "methods",
            reason: "need at least one method".into(),
        });
    }
    Ok(methods)
}

fn thread_count(flag: Option<usize>, cfg: &ConfigFile) -> Result<usize, Error> {
    if let Some(t) = flag {
        return Ok(t.max(1));
    }
    if let Some(t) = cfg.get_usize("threads")? {
        return Ok(t.max(1));
    }
    if let Ok(env) = std::env::var("VSFLQR_THREADS") {
        let t: usize = env.parse().map_err(|_| Error::InvalidParam {
            name: "VSFLQR_THREADS",
            reason: format!("cannot parse '{env}' as a thread count"),
        })?;
        return Ok(t.max(1));
    }
    Ok(1)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParam {
            name: "threads",
            reason: e.to_string(),
        })?;
    Ok(pool.install(f))
}

fn run_mc(args: McArgs) -> Result<(), Error> {
    let cfg = ConfigFile::load(
        args.config.as_deref(),
        &[
            "n",
            "tau",
            "design",
            "seed",
            "reps",
            "methods",
            "pve",
            "threads",
            "replicate_log",
        ],
    )?;
    let mut scenario_cfg = scenario_from(args.n, args.tau, args.design, args.seed, &cfg)?;
    scenario_cfg.n_reps = args.reps.or(cfg.get_usize("reps")?).unwrap_or(200);
    // Harness default 0.99 keeps the full generator spectrum.
    scenario_cfg.pve = args.pve.or(cfg.get_f64("pve")?).unwrap_or(0.99);
    let methods_str = args
        .methods
        .or(cfg.get_string("methods")?)
        .unwrap_or_else(|| "vsflqr,rq-glasso,ls-glasso".to_string());
    let methods = parse_methods(&methods_str)?;
    let threads = thread_count(args.threads, &cfg)?;

    let (reports, log) = in_pool(threads, || run_monte_carlo_logged(&scenario_cfg, &methods))??;

    if let Some(r) = reports.first() {
        if r.n_failed > 0 {
            eprintln!(
                "warning: {} of {} replicates failed and were excluded",
                r.n_failed, scenario_cfg.n_reps
            );
        }
    }
    io::write_metrics_reports_csv(&args.out.join("report.csv"), &reports)?;
    io::write_metrics_reports_json(&args.out.join("report.json"), &reports)?;
    if args.replicate_log || cfg.get_bool("replicate_log")?.unwrap_or(false) {
        io::write_replicate_log_csv(&args.out.join("replicates.csv"), &log)?;
    }
    for r in &reports {
        println!(
            "{}: TPR(all)={:.3} FPR(all)={:.3} size={:.2} MSPE={:.3} MAPE={:.3} ({} reps, {} failed)",
            r.method,
            r.selection.tpr_all,
            r.selection.fpr_all,
            r.selection.avg_model_size,
            r.mspe,
            r.mape,
            r.n_replicates,
            r.n_failed
        );
    }
    Ok(())
}

fn run_lmoments(args: LmomentsArgs) -> Result<(), Error> {
    let cfg = ConfigFile::load(args.config.as_deref(), &["zeta", "threads"])?;
    let zeta = args
        .zeta
        .or(cfg.get_f64("zeta")?)
        .unwrap_or(vsflqr_core::lmoments::DEFAULT_ZETA_HOURS);
    let threads = thread_count(args.threads, &cfg)?;
    let records = io::read_activity_csv(&args.input)?;
    let curves: Result<Vec<LMomentCurves>, Error> = in_pool(threads, || {
        use rayon::prelude::*;
        records
            .par_iter()
            .map(|r| diurnal_lmoments(r, zeta))
            .collect()
    })?;
    let curves = curves?;
    io::write_lmoment_curves_csv(&args.out.join("lmoments.csv"), &curves)?;
    println!(
        "extracted diurnal L-moments for {} subjects (zeta = {zeta} h) -> {}",
        curves.len(),
        args.out.join("lmoments.csv").display()
    );
    Ok(())
}

fn run_pseudo(args: PseudoArgs) -> Result<(), Error> {
    let cfg = ConfigFile::load(
        args.config.as_deref(),
        &[
            "method",
            "tau",
            "reps",
            "n_pseudo",
            "seed",
            "pseudo_amplitude_sd",
            "pve",
            "threads",
        ],
    )?;
    let tau = args.tau.or(cfg.get_f64("tau")?).unwrap_or(0.5);
    let seed = args.seed.or(cfg.get_u64("seed")?).unwrap_or(1);
    let mut pseudo_cfg = PseudoConfig::new(tau, seed);
    pseudo_cfg.n_reps = args.reps.or(cfg.get_usize("reps")?).unwrap_or(100);
    pseudo_cfg.n_pseudo = args.n_pseudo.or(cfg.get_usize("n_pseudo")?).unwrap_or(10);
    pseudo_cfg.amplitude_sd = args
        .pseudo_amplitude_sd
        .or(cfg.get_f64("pseudo_amplitude_sd")?)
        .unwrap_or(10.0);
    pseudo_cfg.fit.pve = args.pve.or(cfg.get_f64("pve")?).unwrap_or(0.99);
    if let Some(m) = args.method.or(cfg.get_string("method")?) {
        pseudo_cfg.method = MethodKind::parse(&m)?;
    }
    let threads = thread_count(args.threads, &cfg)?;

    let spec = io::GridSpec {
        domain: Some((0.0, 24.0)),
        m: None,
    };
    let (scalar_data, functional_data, y) =
        load_fit_inputs(&args.scalars, &args.functional, &args.response, spec)?;
    let data = SimDataset {
        eta_true: vec![0.0; y.len()],
        scale_true: vec![1.0; y.len()],
        scalars: scalar_data,
        functional: functional_data,
        y,
    };
    let freqs = in_pool(threads, || pseudo_variable_experiment(&data, &pseudo_cfg))??;
    io::write_frequency_csv(&args.out.join("pseudo_frequencies.csv"), &freqs)?;
    for f in &freqs {
        println!("{:<12} {:<12} {:6.2}%", f.kind, f.name, f.pct);
    }
    Ok(())
}
