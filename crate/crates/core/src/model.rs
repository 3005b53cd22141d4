//! End-to-end pipeline: FPCA per functional covariate, penalized fit along a
//! lambda path with EBIC selection, coefficient-function reconstruction,
//! prediction on new data, and JSON (de)serialization of fitted models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::{
    center_dataset, compute_scores, compute_scores_irregular, estimate_covariance,
    estimate_covariance_windowed, fpca, regularize_to_grid, trapezoid_weights, EigenSystem,
    FunctionalDataset, FunctionalSample,
};
use crate::losspen::PenaltyKind;
use crate::solver::{
    build_design, default_min_ratio, ebic_select, lambda_path, EbicForm, FitResult, LossKind,
    SolverConfig,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Which estimator to run.
///
/// VSFLQR is group MCP with the Huber-smoothed quantile loss; RQ-GLASSO swaps
/// the penalty for group LASSO; LS-GLASSO additionally swaps the loss for
/// squared error (mean regression, compared at the median).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodKind {
    Vsflqr,
    RqGlasso,
    LsGlasso,
}

impl MethodKind {
    pub fn penalty(&self) -> PenaltyKind {
        match self {
            MethodKind::Vsflqr => PenaltyKind::Mcp,
            MethodKind::RqGlasso | MethodKind::LsGlasso => PenaltyKind::Lasso,
        }
    }

    pub fn loss(&self) -> LossKind {
        match self {
            MethodKind::LsGlasso => LossKind::Squared,
            _ => LossKind::HuberQuantile,
        }
    }

    /// Tuning criterion form. The quantile group-LASSO baseline uses the
    /// log-sum deviance, which keeps it at near-null models and reproduces
    /// its reference behavior; the other methods use the n-scaled deviance
    /// that recovers true models.
    pub fn ebic_form(&self) -> EbicForm {
        match self {
            MethodKind::RqGlasso => EbicForm::LogSum,
            _ => EbicForm::ScaledDeviance,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vsflqr" => Ok(MethodKind::Vsflqr),
            "rq-glasso" | "rqglasso" => Ok(MethodKind::RqGlasso),
            "ls-glasso" | "lsglasso" => Ok(MethodKind::LsGlasso),
            other => Err(Error::InvalidParam {
                name: "method",
                reason: format!("unknown method '{other}' (expected vsflqr, rq-glasso, or ls-glasso)"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Vsflqr => "vsflqr",
            MethodKind::RqGlasso => "rq-glasso",
            MethodKind::LsGlasso => "ls-glasso",
        }
    }
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Pipeline settings (PVE threshold, solver knobs, path layout).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub pve: f64,
    pub gamma: f64,
    pub phi: f64,
    pub n_lambda: usize,
    /// Path floor as a fraction of lambda_max; `None` picks 0.001, or 0.05
    /// when the penalized parameter count exceeds n.
    pub min_ratio: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            pve: 0.95,
            gamma: 0.2,
            phi: 3.0,
            n_lambda: 100,
            min_ratio: None,
            tol: 1e-7,
            max_iter: 10_000,
        }
    }
}

/// Scalar covariates with subject identifiers (no intercept column; the
/// intercept is implicit and unpenalized).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarData {
    pub subject_ids: Vec<String>,
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl ScalarData {
    pub fn new(subject_ids: Vec<String>, names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != subject_ids.len() {
            return Err(Error::Dimension {
                context: "scalar rows vs subject ids".into(),
                expected: subject_ids.len(),
                found: values.nrows(),
            });
        }
        if values.ncols() != names.len() {
            return Err(Error::Dimension {
                context: "scalar columns vs names".into(),
                expected: names.len(),
                found: values.ncols(),
            });
        }
        Ok(ScalarData {
            subject_ids,
            names,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.subject_ids.len()
    }
}

/// Per-covariate piece of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub covariate_id: String,
    pub domain: (f64, f64),
    pub eigen: EigenSystem,
    /// Coefficients on the raw score scale, one per retained component.
    pub alpha: Vec<f64>,
    /// Reconstructed coefficient function on the grid; identically zero for
    /// unselected covariates.
    pub gamma_curve: Vec<f64>,
    pub active: bool,
}

/// Tuning outcome of the selected path entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub nu: usize,
    pub lambda: f64,
    pub bic: f64,
    pub ebic: f64,
    pub ebic_form: EbicForm,
    pub min_ratio_used: f64,
    pub n_lambda: usize,
}

/// A fitted functional linear quantile regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FLQRModel {
    pub version: u32,
    pub method: MethodKind,
    pub tau: f64,
    pub config: FitConfig,
    pub scalar_names: Vec<String>,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub covariates: Vec<CovariateModel>,
    pub fit: FitResult,
    pub selection: SelectionSummary,
}

/// Human-readable selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedReport {
    pub scalars: Vec<String>,
    pub functional: Vec<String>,
    pub nu: usize,
    pub lambda: f64,
    pub ebic: f64,
}

/// Reorder a dataset's samples to match `subject_ids`; every subject must
/// appear exactly once.
fn align_dataset(ds: &FunctionalDataset, subject_ids: &[String]) -> Result<FunctionalDataset> {
    let mut by_id = std::collections::HashMap::with_capacity(ds.samples.len());
    for (i, s) in ds.samples.iter().enumerate() {
        by_id.insert(s.subject_id.as_str(), i);
    }
    if ds.samples.len() != subject_ids.len() {
        return Err(Error::SubjectMismatch(format!(
            "covariate '{}' has {} subjects, expected {}",
            ds.covariate_id,
            ds.samples.len(),
            subject_ids.len()
        )));
    }
    let mut samples = Vec::with_capacity(subject_ids.len());
    for id in subject_ids {
        match by_id.get(id.as_str()) {
            Some(&i) => samples.push(ds.samples[i].clone()),
            None => {
                return Err(Error::SubjectMismatch(format!(
                    "covariate '{}' is missing subject '{id}'",
                    ds.covariate_id
                )))
            }
        }
    }
    Ok(FunctionalDataset {
        covariate_id: ds.covariate_id.clone(),
        domain: ds.domain,
        samples,
        common_grid: ds.common_grid.clone(),
    })
}

/// Fit the full pipeline: regularize, center, FPCA, score, build the design,
/// run the lambda path, select by EBIC, and reconstruct coefficient curves.
pub fn fit(
    scalars: &ScalarData,
    functional: &[FunctionalDataset],
    y: &[f64],
    tau: f64,
    method: MethodKind,
    config: &FitConfig,
) -> Result<FLQRModel> {
    let n = scalars.n();
    if y.len() != n {
        return Err(Error::Dimension {
            context: "response length vs subjects".into(),
            expected: n,
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain {
            op: "fit",
            reason: "response contains non-finite values".into(),
        });
    }

    let mut eigensystems = Vec::with_capacity(functional.len());
    let mut score_blocks = Vec::with_capacity(functional.len());
    for ds in functional {
        let id = ds.covariate_id.clone();
        let run = || -> Result<(EigenSystem, DMatrix<f64>)> {
            if ds.samples.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let aligned = align_dataset(ds, &scalars.subject_ids)?;
            let regular = regularize_to_grid(&aligned)?;
            let (centered, mean) = center_dataset(&regular)?;
            // Irregular samples: the covariance averages only over observed
            // windows (flat-extrapolated boundary values would bias the
            // eigenfunctions), and scores come from per-subject
            // least-squares projections over the observed points.
            let is_reg = aligned.is_regular();
            let cov = if is_reg {
                estimate_covariance(&centered)?
            } else {
                let windows: Vec<(f64, f64)> = aligned
                    .samples
                    .iter()
                    .map(|s| (s.times[0], *s.times.last().unwrap()))
                    .collect();
                estimate_covariance_windowed(&centered, &windows)?
            };
            let weights = trapezoid_weights(&regular.common_grid);
            let eigen = fpca(&cov, &weights, config.pve)?
                .with_grid_and_mean(regular.common_grid.clone(), mean);
            let scores = if is_reg {
                compute_scores(&centered, &eigen)?
            } else {
                compute_scores_irregular(&aligned, &eigen)?
            };
            Ok((eigen, scores.scores))
        };
        let (eigen, scores) = run().map_err(|e| e.in_covariate(&id))?;
        eigensystems.push(eigen);
        score_blocks.push(scores);
    }

    let blocks = build_design(&scalars.values, &score_blocks)?;
    let mut solver_cfg = SolverConfig::new(tau);
    solver_cfg.gamma = config.gamma;
    solver_cfg.phi = config.phi;
    solver_cfg.tol = config.tol;
    solver_cfg.max_iter = config.max_iter;
    solver_cfg.penalty = method.penalty();
    solver_cfg.loss = method.loss();

    let min_ratio = config
        .min_ratio
        .unwrap_or_else(|| default_min_ratio(blocks.total_penalized(), n));
    let path = lambda_path(&blocks, y, &solver_cfg, config.n_lambda, min_ratio)?;
    let p_total = scalars.names.len() + functional.len();
    let path = ebic_select(path, y, tau, p_total, method.ebic_form())?;
    let sel = path.selected.expect("ebic_select always selects");
    let fit = path.fits[sel].clone();

    let mut covariates = Vec::with_capacity(functional.len());
    for (j, (ds, eigen)) in functional.iter().zip(eigensystems).enumerate() {
        let alpha = fit.alpha[j].clone();
        let gamma_curve = reconstruct_coefficient(&alpha, &eigen)?;
        covariates.push(CovariateModel {
            covariate_id: ds.covariate_id.clone(),
            domain: ds.domain,
            eigen,
            alpha,
            gamma_curve,
            active: fit.active_groups.contains(&j),
        });
    }

    let selection = SelectionSummary {
        nu: fit.active_scalars.len() + fit.active_groups.len(),
        lambda: path.lambdas[sel],
        bic: path.bic[sel],
        ebic: path.ebic[sel],
        ebic_form: method.ebic_form(),
        min_ratio_used: min_ratio,
        n_lambda: config.n_lambda,
    };

    Ok(FLQRModel {
        version: MODEL_FORMAT_VERSION,
        method,
        tau,
        config: *config,
        scalar_names: scalars.names.clone(),
        intercept: fit.intercept,
        beta: fit.beta.clone(),
        covariates,
        fit,
        selection,
    })
}

/// Pointwise combination `Gamma(s) = sum_q alpha_q phi_q(s)` on the grid.
pub fn reconstruct_coefficient(alpha: &[f64], eigen: &EigenSystem) -> Result<Vec<f64>> {
    if alpha.len() != eigen.rank() {
        return Err(Error::Dimension {
            context: "alpha vs eigensystem rank".into(),
            expected: eigen.rank(),
            found: alpha.len(),
        });
    }
    let m = eigen.quadrature_weights.len();
    let mut curve = vec![0.0; m];
    for (a, phi) in alpha.iter().zip(&eigen.eigenfunctions) {
        for (c, p) in curve.iter_mut().zip(phi) {
            *c += a * p;
        }
    }
    Ok(curve)
}

/// Predicted conditional tau-quantiles for new subjects.
///
/// New curves are interpolated to the training grid, centered with the
/// training mean, and projected onto the training eigenfunctions.
pub fn predict(
    model: &FLQRModel,
    scalars: &ScalarData,
    functional: &[FunctionalDataset],
) -> Result<Vec<f64>> {
    if scalars.names != model.scalar_names {
        return Err(Error::InvalidParam {
            name: "scalars",
            reason: format!(
                "scalar columns {:?} do not match the model's {:?}",
                scalars.names, model.scalar_names
            ),
        });
    }
    // Covariate sets must match the model exactly.
    for ds in functional {
        if !model
            .covariates
            .iter()
            .any(|c| c.covariate_id == ds.covariate_id)
        {
            return Err(Error::UnknownCovariate(ds.covariate_id.clone()));
        }
    }

    let n = scalars.n();
    let mut eta = vec![model.intercept; n];
    for (b, coef) in model.beta.iter().enumerate() {
        if *coef != 0.0 {
            for i in 0..n {
                eta[i] += coef * scalars.values[(i, b)];
            }
        }
    }

    for cov in &model.covariates {
        let ds = functional
            .iter()
            .find(|d| d.covariate_id == cov.covariate_id)
            .ok_or_else(|| Error::MissingCovariate(cov.covariate_id.clone()))?;
        let tol = 1e-9 * (cov.domain.1 - cov.domain.0).abs().max(1.0);
        if (ds.domain.0 - cov.domain.0).abs() > tol || (ds.domain.1 - cov.domain.1).abs() > tol {
            return Err(Error::GridMismatch(format!(
                "covariate '{}' has domain [{}, {}], model expects [{}, {}]",
                cov.covariate_id, ds.domain.0, ds.domain.1, cov.domain.0, cov.domain.1
            )));
        }
        // Unselected covariates contribute exactly zero.
        if cov.alpha.iter().all(|a| *a == 0.0) {
            continue;
        }
        let aligned = align_dataset(ds, &scalars.subject_ids)?;
        let on_model_grid = FunctionalDataset {
            covariate_id: aligned.covariate_id.clone(),
            domain: cov.domain,
            samples: aligned.samples,
            common_grid: cov.eigen.grid.clone(),
        };
        // Mirror the training-time scoring path so a training subject fed
        // back in reproduces its fitted value.
        let scores = if on_model_grid.is_regular() {
            let regular = regularize_to_grid(&on_model_grid)?;
            let centered = FunctionalDataset {
                covariate_id: regular.covariate_id.clone(),
                domain: regular.domain,
                samples: regular
                    .samples
                    .iter()
                    .map(|s| FunctionalSample {
                        subject_id: s.subject_id.clone(),
                        times: s.times.clone(),
                        values: s
                            .values
                            .iter()
                            .zip(&cov.eigen.mean_curve)
                            .map(|(v, mu)| v - mu)
                            .collect(),
                    })
                    .collect(),
                common_grid: regular.common_grid.clone(),
            };
            compute_scores(&centered, &cov.eigen)?
        } else {
            compute_scores_irregular(&on_model_grid, &cov.eigen)?
        };
        for i in 0..n {
            let mut contrib = 0.0;
            for (q, a) in cov.alpha.iter().enumerate() {
                if *a != 0.0 {
                    contrib += a * scores.scores[(i, q)];
                }
            }
            eta[i] += contrib;
        }
    }
    Ok(eta)
}

/// Active variables, model size, and tuning summary of a fitted model.
pub fn selected_variables(model: &FLQRModel) -> SelectedReport {
    let scalars = model
        .fit
        .active_scalars
        .iter()
        .map(|&b| model.scalar_names[b].clone())
        .collect();
    let functional = model
        .covariates
        .iter()
        .filter(|c| c.active)
        .map(|c| c.covariate_id.clone())
        .collect();
    SelectedReport {
        scalars,
        functional,
        nu: model.selection.nu,
        lambda: model.selection.lambda,
        ebic: model.selection.ebic,
    }
}

impl FLQRModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<FLQRModel> {
        let model: FLQRModel =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model version {} (this build reads version {})",
                model.version, MODEL_FORMAT_VERSION
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcdata::weighted_inner;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn empty_scalar_data(n: usize) -> ScalarData {
        ScalarData::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            Vec::new(),
            DMatrix::zeros(n, 0),
        )
        .unwrap()
    }

    fn intercept_only_model(c: f64) -> FLQRModel {
        FLQRModel {
            version: MODEL_FORMAT_VERSION,
            method: MethodKind::Vsflqr,
            tau: 0.5,
            config: FitConfig::default(),
            scalar_names: Vec::new(),
            intercept: c,
            beta: Vec::new(),
            covariates: Vec::new(),
            fit: FitResult {
                lambda: 1.0,
                intercept: c,
                beta: Vec::new(),
                alpha: Vec::new(),
                active_scalars: Vec::new(),
                active_groups: Vec::new(),
                iterations: 1,
                converged: true,
                objective: 0.0,
                fitted: Vec::new(),
                intercept_std: c,
                beta_std: Vec::new(),
                alpha_std: Vec::new(),
            },
            selection: SelectionSummary {
                nu: 0,
                lambda: 1.0,
                bic: 0.0,
                ebic: 0.0,
                ebic_form: EbicForm::ScaledDeviance,
                min_ratio_used: 0.001,
                n_lambda: 100,
            },
        }
    }

    fn orthonormal_eigen(grid: &[f64]) -> EigenSystem {
        let w = trapezoid_weights(grid);
        let raw: Vec<Vec<f64>> = vec![
            grid.iter().map(|_| 1.0).collect(),
            grid.iter().map(|s| *s).collect(),
        ];
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for mut v in raw {
            for b in &basis {
                let p = weighted_inner(&v, b, &w);
                for (x, bb) in v.iter_mut().zip(b) {
                    *x -= p * bb;
                }
            }
            let nrm = weighted_inner(&v, &v, &w).sqrt();
            basis.push(v.iter().map(|x| x / nrm).collect());
        }
        EigenSystem {
            grid: grid.to_vec(),
            mean_curve: vec![0.0; grid.len()],
            eigenfunctions: basis,
            eigenvalues: vec![2.0, 1.0],
            pve_achieved: 1.0,
            quadrature_weights: w,
        }
    }

    #[test]
    fn reconstruct_zero_alpha_gives_zero_curve() {
        let grid = FunctionalDataset::uniform_grid(0.0, 1.0, 11);
        let eigen = orthonormal_eigen(&grid);
        let curve = reconstruct_coefficient(&[0.0, 0.0], &eigen).unwrap();
        assert!(curve.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reconstruct_unit_alpha_gives_eigenfunction() {
        let grid = FunctionalDataset::uniform_grid(0.0, 1.0, 11);
        let eigen = orthonormal_eigen(&grid);
        let curve = reconstruct_coefficient(&[1.0, 0.0], &eigen).unwrap();
        for (c, p) in curve.iter().zip(&eigen.eigenfunctions[0]) {
            assert_abs_diff_eq!(c, p);
        }
    }

    #[test]
    fn reconstruct_hand_combination() {
        let grid = FunctionalDataset::uniform_grid(0.0, 1.0, 11);
        let eigen = orthonormal_eigen(&grid);
        let curve = reconstruct_coefficient(&[2.0, -1.0], &eigen).unwrap();
        for i in 0..grid.len() {
            let expect = 2.0 * eigen.eigenfunctions[0][i] - eigen.eigenfunctions[1][i];
            assert_abs_diff_eq!(curve[i], expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn reconstruct_dimension_mismatch() {
        let grid = FunctionalDataset::uniform_grid(0.0, 1.0, 11);
        let eigen = orthonormal_eigen(&grid);
        assert!(matches!(
            reconstruct_coefficient(&[1.0], &eigen),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn reconstruction_roundtrip_recovers_alpha() {
        let grid = FunctionalDataset::uniform_grid(0.0, 1.0, 31);
        let eigen = orthonormal_eigen(&grid);
        let alpha = [1.7, -0.9];
        let curve = reconstruct_coefficient(&alpha, &eigen).unwrap();
        for (q, a) in alpha.iter().enumerate() {
            let ip = weighted_inner(&curve, &eigen.eigenfunctions[q], &eigen.quadrature_weights);
            assert_abs_diff_eq!(ip, *a, epsilon = 1e-8);
        }
    }

    #[test]
    fn predict_intercept_only_is_constant() {
        let model = intercept_only_model(3.25);
        let scalars = empty_scalar_data(5);
        let pred = predict(&model, &scalars, &[]).unwrap();
        assert_eq!(pred, vec![3.25; 5]);
    }

    #[test]
    fn predict_hand_built_model() {
        // beta = (1, 2), one covariate with alpha = (1, 0), curve = 3*phi_1:
        // prediction = intercept + x.beta + 3.
        let grid = FunctionalDataset::uniform_grid(0.0, 1.0, 21);
        let eigen = orthonormal_eigen(&grid);
        let phi1 = eigen.eigenfunctions[0].clone();
        let mut model = intercept_only_model(0.5);
        model.scalar_names = vec!["x1".into(), "x2".into()];
        model.beta = vec![1.0, 2.0];
        model.covariates.push(CovariateModel {
            covariate_id: "z1".into(),
            domain: (0.0, 1.0),
            eigen: eigen.clone(),
            alpha: vec![1.0, 0.0],
            gamma_curve: phi1.clone(),
            active: true,
        });
        let scalars = ScalarData::new(
            vec!["a".into()],
            vec!["x1".into(), "x2".into()],
            DMatrix::from_row_slice(1, 2, &[2.0, -1.0]),
        )
        .unwrap();
        let curve: Vec<f64> = phi1.iter().map(|p| 3.0 * p).collect();
        let ds = FunctionalDataset::new(
            "z1",
            (0.0, 1.0),
            vec![FunctionalSample::new("a", grid.clone(), curve).unwrap()],
            grid,
        )
        .unwrap();
        let pred = predict(&model, &scalars, &[ds]).unwrap();
        // 0.5 + (1*2 + 2*(-1)) + 3 = 3.5
        assert_abs_diff_eq!(pred[0], 3.5, epsilon = 1e-8);
    }

    #[test]
    fn predict_unknown_and_missing_covariates() {
        let grid = FunctionalDataset::uniform_grid(0.0, 1.0, 21);
        let eigen = orthonormal_eigen(&grid);
        let mut model = intercept_only_model(0.0);
        model.covariates.push(CovariateModel {
            covariate_id: "z1".into(),
            domain: (0.0, 1.0),
            eigen,
            alpha: vec![1.0, 0.0],
            gamma_curve: vec![0.0; grid.len()],
            active: true,
        });
        let scalars = empty_scalar_data(1);
        // Provided covariate unknown to the model.
        let other = FunctionalDataset::new(
            "zX",
            (0.0, 1.0),
            vec![FunctionalSample::new("s0", grid.clone(), vec![0.0; grid.len()]).unwrap()],
            grid.clone(),
        )
        .unwrap();
        assert!(matches!(
            predict(&model, &scalars, &[other]),
            Err(Error::UnknownCovariate(_))
        ));
        // Required covariate absent.
        assert!(matches!(
            predict(&model, &scalars, &[]),
            Err(Error::MissingCovariate(_))
        ));
    }

    fn simulate_small() -> (ScalarData, Vec<FunctionalDataset>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 120;
        let grid = FunctionalDataset::uniform_grid(0.0, 1.0, 41);
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let xs = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let pi = std::f64::consts::PI;
        let mut samples1 = Vec::new();
        let mut samples2 = Vec::new();
        let mut signal = Vec::new();
        for i in 0..n {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let c1: Vec<f64> = grid
                .iter()
                .map(|s| a * (pi * s).sin() + 0.4 * b * (2.0 * pi * s).cos())
                .collect();
            let d: f64 = rng.gen_range(-1.0..1.0);
            let c2: Vec<f64> = grid.iter().map(|s| d * (1.0 - s)).collect();
            // Signal loads on x0 and the first covariate's main direction.
            signal.push(2.0 * xs[(i, 0)] + 1.5 * a);
            samples1.push(FunctionalSample::new(ids[i].clone(), grid.clone(), c1).unwrap());
            samples2.push(FunctionalSample::new(ids[i].clone(), grid.clone(), c2).unwrap());
        }
        let y: Vec<f64> = signal
            .iter()
            .map(|s| 1.0 + s + rng.gen_range(-0.2..0.2))
            .collect();
        let scalars = ScalarData::new(ids, vec!["x1".into(), "x2".into()], xs).unwrap();
        let f1 = FunctionalDataset::new("z1", (0.0, 1.0), samples1, grid.clone()).unwrap();
        let f2 = FunctionalDataset::new("z2", (0.0, 1.0), samples2, grid).unwrap();
        (scalars, vec![f1, f2], y)
    }

    #[test]
    fn fit_predict_consistency_on_training_data() {
        let (scalars, functional, y) = simulate_small();
        let model = fit(
            &scalars,
            &functional,
            &y,
            0.5,
            MethodKind::Vsflqr,
            &FitConfig::default(),
        )
        .unwrap();
        let pred = predict(&model, &scalars, &functional).unwrap();
        for (p, f) in pred.iter().zip(&model.fit.fitted) {
            assert_abs_diff_eq!(p, f, epsilon = 1e-8);
        }
        // The signal variable and covariate must be selected.
        let report = selected_variables(&model);
        assert!(report.scalars.contains(&"x1".to_string()));
        assert!(report.functional.contains(&"z1".to_string()));
    }

    #[test]
    fn unselected_covariate_contributes_nothing() {
        let (scalars, functional, y) = simulate_small();
        let model = fit(
            &scalars,
            &functional,
            &y,
            0.5,
            MethodKind::Vsflqr,
            &FitConfig::default(),
        )
        .unwrap();
        let z2 = model
            .covariates
            .iter()
            .find(|c| c.covariate_id == "z2")
            .unwrap();
        if z2.active {
            // Selection is data-dependent; only check the zero-curve contract
            // when z2 was excluded.
            return;
        }
        assert!(z2.gamma_curve.iter().all(|v| *v == 0.0));
        // Replacing z2's curves leaves predictions unchanged.
        let mut altered = functional.clone();
        for s in &mut altered[1].samples {
            for v in &mut s.values {
                *v += 5.0;
            }
        }
        let p1 = predict(&model, &scalars, &functional).unwrap();
        let p2 = predict(&model, &scalars, &altered).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn prediction_is_affine_in_inputs() {
        let (scalars, functional, y) = simulate_small();
        let model = fit(
            &scalars,
            &functional,
            &y,
            0.5,
            MethodKind::Vsflqr,
            &FitConfig::default(),
        )
        .unwrap();
        // Center inputs with the training means so curve scaling acts on the
        // centered signal; predictions minus the covariate-free baseline must
        // scale linearly.
        let a = 2.0;
        let mut scaled_scalars = scalars.clone();
        for v in scaled_scalars.values.iter_mut() {
            *v *= a;
        }
        let mut scaled_curves = functional.clone();
        for (ds, cov) in scaled_curves.iter_mut().zip(&model.covariates) {
            for s in &mut ds.samples {
                for (v, mu) in s.values.iter_mut().zip(&cov.eigen.mean_curve) {
                    *v = mu + a * (*v - mu);
                }
            }
        }
        let base = predict(&model, &scalars, &functional).unwrap();
        let scaled = predict(&model, &scaled_scalars, &scaled_curves).unwrap();
        // eta(a*x) - intercept-ish terms: check affinity via
        // scaled - base = (a - 1) * (base - eta0) where eta0 is prediction at
        // zero scalars and mean curves.
        let zero_scalars = ScalarData::new(
            scalars.subject_ids.clone(),
            scalars.names.clone(),
            DMatrix::zeros(scalars.n(), scalars.names.len()),
        )
        .unwrap();
        let mean_curves: Vec<FunctionalDataset> = functional
            .iter()
            .zip(&model.covariates)
            .map(|(ds, cov)| {
                let samples = ds
                    .samples
                    .iter()
                    .map(|s| {
                        FunctionalSample::new(
                            s.subject_id.clone(),
                            cov.eigen.grid.clone(),
                            cov.eigen.mean_curve.clone(),
                        )
                        .unwrap()
                    })
                    .collect();
                FunctionalDataset {
                    covariate_id: ds.covariate_id.clone(),
                    domain: ds.domain,
                    samples,
                    common_grid: cov.eigen.grid.clone(),
                }
            })
            .collect();
        let eta0 = predict(&model, &zero_scalars, &mean_curves).unwrap();
        for i in 0..base.len() {
            let lhs = scaled[i] - base[i];
            let rhs = (a - 1.0) * (base[i] - eta0[i]);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
        }
    }

    #[test]
    fn model_json_roundtrip_preserves_predictions_bitwise() {
        let (scalars, functional, y) = simulate_small();
        let model = fit(
            &scalars,
            &functional,
            &y,
            0.5,
            MethodKind::Vsflqr,
            &FitConfig::default(),
        )
        .unwrap();
        let json = model.to_json();
        let reloaded = FLQRModel::from_json(&json).unwrap();
        assert_eq!(model, reloaded);
        let p1 = predict(&model, &scalars, &functional).unwrap();
        let p2 = predict(&reloaded, &scalars, &functional).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn from_json_rejects_other_versions() {
        let mut model = intercept_only_model(1.0);
        model.version = 99;
        let json = serde_json::to_string(&model).unwrap();
        assert!(matches!(
            FLQRModel::from_json(&json),
            Err(Error::ModelFormat(_))
        ));
    }

    #[test]
    fn method_kind_parsing() {
        assert_eq!(MethodKind::parse("vsflqr").unwrap(), MethodKind::Vsflqr);
        assert_eq!(MethodKind::parse("RQ-GLASSO").unwrap(), MethodKind::RqGlasso);
        assert_eq!(MethodKind::parse("ls-glasso").unwrap(), MethodKind::LsGlasso);
        assert!(MethodKind::parse("ridge").is_err());
    }

    #[test]
    fn rq_glasso_path_matches_vsflqr_path_with_huge_phi() {
        // The two methods share the entire pipeline except the threshold
        // operator; as phi -> infinity the firm threshold becomes soft, so
        // the per-lambda path coefficients must coincide.
        use crate::solver::{build_design, lambda_path, SolverConfig};
        use crate::funcdata::{
            center_dataset, compute_scores, estimate_covariance, fpca, regularize_to_grid,
            trapezoid_weights,
        };
        use crate::losspen::PenaltyKind;

        let (scalars, functional, y) = simulate_small();
        let mut score_blocks = Vec::new();
        for ds in &functional {
            let regular = regularize_to_grid(ds).unwrap();
            let (centered, _) = center_dataset(&regular).unwrap();
            let cov = estimate_covariance(&centered).unwrap();
            let w = trapezoid_weights(&regular.common_grid);
            let eigen = fpca(&cov, &w, 0.95).unwrap();
            score_blocks.push(compute_scores(&centered, &eigen).unwrap().scores);
        }
        let blocks = build_design(&scalars.values, &score_blocks).unwrap();
        let lasso_cfg = SolverConfig {
            penalty: PenaltyKind::Lasso,
            ..SolverConfig::new(0.5)
        };
        let mcp_cfg = SolverConfig {
            phi: 1e8,
            ..SolverConfig::new(0.5)
        };
        let lasso_path = lambda_path(&blocks, &y, &lasso_cfg, 30, 0.01).unwrap();
        let mcp_path = lambda_path(&blocks, &y, &mcp_cfg, 30, 0.01).unwrap();
        for (lf, mf) in lasso_path.fits.iter().zip(&mcp_path.fits) {
            for (a, b) in mf.beta_std.iter().zip(&lf.beta_std) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-5);
            }
            for (ga, gb) in mf.alpha_std.iter().zip(&lf.alpha_std) {
                for (a, b) in ga.iter().zip(gb) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-5);
                }
            }
        }
    }
}
