//! Functional covariates: grid regularization, centering, covariance
//! estimation, FPCA, and principal-component score extraction.
//!
//! Curves live on a common evaluation grid inside a closed domain `[a, b]`.
//! Sparsely observed curves are linearly interpolated onto the grid (flat
//! extrapolation beyond the first/last observation). The eigenproblem is
//! solved in the quadrature-weighted inner product so that eigenfunctions
//! are orthonormal under trapezoidal integration on the grid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject's curve, observed at strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub subject_id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl FunctionalSample {
    pub fn new(subject_id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let subject_id = subject_id.into();
        if times.len() < 2 {
            return Err(Error::DegenerateSample {
                subject: subject_id,
                found: times.len(),
            });
        }
        if times.len() != values.len() {
            return Err(Error::InvalidSample {
                subject: subject_id,
                reason: format!(
                    "times ({}) and values ({}) differ in length",
                    times.len(),
                    values.len()
                ),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSample {
                subject: subject_id,
                reason: "times must be strictly increasing".into(),
            });
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample {
                subject: subject_id,
                reason: "times and values must be finite".into(),
            });
        }
        Ok(FunctionalSample {
            subject_id,
            times,
            values,
        })
    }
}

/// A functional covariate observed on one subject per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    pub covariate_id: String,
    pub domain: (f64, f64),
    pub samples: Vec<FunctionalSample>,
    pub common_grid: Vec<f64>,
}

impl FunctionalDataset {
    pub fn new(
        covariate_id: impl Into<String>,
        domain: (f64, f64),
        samples: Vec<FunctionalSample>,
        common_grid: Vec<f64>,
    ) -> Result<Self> {
        let covariate_id = covariate_id.into();
        let (a, b) = domain;
        if !(b > a) {
            return Err(Error::InvalidDataset {
                id: covariate_id,
                reason: format!("domain [{a}, {b}] must have positive length"),
            });
        }
        if common_grid.len() < 2 {
            return Err(Error::InvalidDataset {
                id: covariate_id,
                reason: format!(
                    "common grid needs at least 2 points, found {}",
                    common_grid.len()
                ),
            });
        }
        if common_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDataset {
                id: covariate_id,
                reason: "common grid must be strictly increasing".into(),
            });
        }
        let eps = 1e-9 * (b - a).abs().max(1.0);
        if common_grid[0] < a - eps || *common_grid.last().unwrap() > b + eps {
            return Err(Error::InvalidDataset {
                id: covariate_id,
                reason: "common grid must lie within the domain".into(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            if !seen.insert(s.subject_id.clone()) {
                return Err(Error::InvalidDataset {
                    id: covariate_id,
                    reason: format!("duplicate subject id '{}'", s.subject_id),
                });
            }
            if s.times[0] < a - eps || *s.times.last().unwrap() > b + eps {
                return Err(Error::InvalidDataset {
                    id: covariate_id,
                    reason: format!(
                        "subject '{}' has observation times outside [{a}, {b}]",
                        s.subject_id
                    ),
                });
            }
        }
        Ok(FunctionalDataset {
            covariate_id,
            domain,
            samples,
            common_grid,
        })
    }

    /// Uniform grid of `m` points spanning `[a, b]`.
    pub fn uniform_grid(a: f64, b: f64, m: usize) -> Vec<f64> {
        (0..m)
            .map(|i| a + (b - a) * i as f64 / (m - 1) as f64)
            .collect()
    }

    pub fn n_subjects(&self) -> usize {
        self.samples.len()
    }

    /// True when every sample is already evaluated on the common grid.
    pub fn is_regular(&self) -> bool {
        self.samples
            .iter()
            .all(|s| on_grid(&s.times, &self.common_grid))
    }
}

fn on_grid(times: &[f64], grid: &[f64]) -> bool {
    times.len() == grid.len()
        && times
            .iter()
            .zip(grid)
            .all(|(t, g)| (t - g).abs() <= 1e-12 * g.abs().max(1.0))
}

/// Trapezoidal quadrature weights for a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    assert!(m >= 2, "trapezoid weights need at least 2 grid points");
    let mut w = vec![0.0; m];
    w[0] = (grid[1] - grid[0]) / 2.0;
    w[m - 1] = (grid[m - 1] - grid[m - 2]) / 2.0;
    for i in 1..m - 1 {
        w[i] = (grid[i + 1] - grid[i - 1]) / 2.0;
    }
    w
}

/// Weighted inner product `sum_m w_m f_m g_m`.
pub fn weighted_inner(f: &[f64], g: &[f64], w: &[f64]) -> f64 {
    f.iter().zip(g).zip(w).map(|((a, b), c)| a * b * c).sum()
}

/// Interpolate every sample onto the common grid.
///
/// Samples already on the grid pass through unchanged. Otherwise values are
/// linearly interpolated between observed points and held flat (nearest
/// observed value) beyond the first/last observation.
pub fn regularize_to_grid(dataset: &FunctionalDataset) -> Result<FunctionalDataset> {
    let grid = &dataset.common_grid;
    let mut samples = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        if s.times.len() < 2 {
            return Err(Error::DegenerateSample {
                subject: s.subject_id.clone(),
                found: s.times.len(),
            });
        }
        if on_grid(&s.times, grid) {
            samples.push(s.clone());
            continue;
        }
        let values = interpolate_flat(&s.times, &s.values, grid);
        samples.push(FunctionalSample {
            subject_id: s.subject_id.clone(),
            times: grid.clone(),
            values,
        });
    }
    Ok(FunctionalDataset {
        covariate_id: dataset.covariate_id.clone(),
        domain: dataset.domain,
        samples,
        common_grid: grid.clone(),
    })
}

/// Linear interpolation with flat extrapolation outside `[times[0], times[last]]`.
fn interpolate_flat(times: &[f64], values: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut k = 0usize;
    for &g in grid {
        if g <= times[0] {
            out.push(values[0]);
            continue;
        }
        if g >= *times.last().unwrap() {
            out.push(*values.last().unwrap());
            continue;
        }
        while times[k + 1] < g {
            k += 1;
        }
        let (t0, t1) = (times[k], times[k + 1]);
        let frac = (g - t0) / (t1 - t0);
        out.push(values[k] + frac * (values[k + 1] - values[k]));
    }
    out
}

/// Subtract the pointwise sample mean; returns the centered dataset and
/// the mean curve.
pub fn center_dataset(dataset: &FunctionalDataset) -> Result<(FunctionalDataset, Vec<f64>)> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = dataset.common_grid.len();
    ensure_regular(dataset)?;
    let n = dataset.samples.len() as f64;
    let mut mean = vec![0.0; m];
    for s in &dataset.samples {
        for (acc, v) in mean.iter_mut().zip(&s.values) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let samples = dataset
        .samples
        .iter()
        .map(|s| FunctionalSample {
            subject_id: s.subject_id.clone(),
            times: s.times.clone(),
            values: s.values.iter().zip(&mean).map(|(v, mu)| v - mu).collect(),
        })
        .collect();
    Ok((
        FunctionalDataset {
            covariate_id: dataset.covariate_id.clone(),
            domain: dataset.domain,
            samples,
            common_grid: dataset.common_grid.clone(),
        },
        mean,
    ))
}

fn ensure_regular(dataset: &FunctionalDataset) -> Result<()> {
    for s in &dataset.samples {
        if s.times.len() != dataset.common_grid.len() {
            return Err(Error::GridMismatch(format!(
                "subject '{}' is not on the common grid ({} points vs {}); regularize first",
                s.subject_id,
                s.times.len(),
                dataset.common_grid.len()
            )));
        }
    }
    Ok(())
}

/// Sample covariance matrix `G(s_m, s_l) = (n-1)^{-1} sum_i Z_i(s_m) Z_i(s_l)`
/// of a centered, regularized dataset.
pub fn estimate_covariance(dataset: &FunctionalDataset) -> Result<DMatrix<f64>> {
    let n = dataset.samples.len();
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, found: n });
    }
    ensure_regular(dataset)?;
    let m = dataset.common_grid.len();
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for s in &dataset.samples {
        let z = DVector::from_column_slice(&s.values);
        cov.syger(1.0, &z, &z, 1.0);
    }
    cov /= (n - 1) as f64;
    // syger fills the lower triangle; mirror it.
    for r in 0..m {
        for c in (r + 1)..m {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    Ok(cov)
}

/// Covariance of interpolated curves restricted to observed windows:
/// entry (a, b) averages `Z_i(s_a) Z_i(s_b)` (centered, interpolated) over
/// the subjects whose observation window `[t_first, t_last]` covers both
/// grid points, normalized by (count - 1). Flat-extrapolated boundary
/// values never enter, which removes the edge bias the plain interpolated
/// covariance picks up from sparse samples; interior interpolation keeps
/// the per-entry averaging dense.
pub fn estimate_covariance_windowed(
    regularized: &FunctionalDataset,
    windows: &[(f64, f64)],
) -> Result<DMatrix<f64>> {
    let n = regularized.samples.len();
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, found: n });
    }
    if windows.len() != n {
        return Err(Error::Dimension {
            context: "windows vs samples".into(),
            expected: n,
            found: windows.len(),
        });
    }
    ensure_regular(regularized)?;
    let grid = &regularized.common_grid;
    let m = grid.len();
    let mut sums = DMatrix::<f64>::zeros(m, m);
    let mut counts = DMatrix::<f64>::zeros(m, m);
    let scale = grid.last().unwrap().abs().max(1.0);
    for (s, &(lo, hi)) in regularized.samples.iter().zip(windows) {
        let a0 = grid.partition_point(|g| *g < lo - 1e-9 * scale);
        let a1 = grid.partition_point(|g| *g <= hi + 1e-9 * scale);
        for a in a0..a1 {
            for b in a0..a1 {
                sums[(a, b)] += s.values[a] * s.values[b];
                counts[(a, b)] += 1.0;
            }
        }
    }
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            if counts[(a, b)] >= 2.0 {
                cov[(a, b)] = sums[(a, b)] / (counts[(a, b)] - 1.0);
            }
        }
    }
    Ok(cov)
}

/// Mean curve, orthonormal eigenfunctions, eigenvalues, and quadrature
/// weights of one functional covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    pub grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    /// Retained eigenfunctions; `eigenfunctions[q]` holds the values of the
    /// q-th eigenfunction on the grid.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Non-increasing, nonnegative eigenvalues of the retained components.
    pub eigenvalues: Vec<f64>,
    pub pve_achieved: f64,
    pub quadrature_weights: Vec<f64>,
}

impl EigenSystem {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn with_grid_and_mean(mut self, grid: Vec<f64>, mean_curve: Vec<f64>) -> Self {
        assert_eq!(grid.len(), self.quadrature_weights.len());
        assert_eq!(mean_curve.len(), grid.len());
        self.grid = grid;
        self.mean_curve = mean_curve;
        self
    }
}

/// Principal-component scores, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub covariate_id: String,
    pub scores: DMatrix<f64>,
}

/// Solve the quadrature-weighted eigenproblem of a covariance matrix and
/// retain the smallest number of components reaching `pve_target`.
///
/// Eigenvalues below `1e-10` times the largest are clamped to zero and never
/// retained; a zero covariance yields an empty (rank 0) system. Each retained
/// eigenfunction is sign-fixed so its entry of largest magnitude is positive.
pub fn fpca(
    covariance: &DMatrix<f64>,
    quadrature_weights: &[f64],
    pve_target: f64,
) -> Result<EigenSystem> {
    let m = quadrature_weights.len();
    if covariance.nrows() != m || covariance.ncols() != m {
        return Err(Error::Dimension {
            context: "covariance vs quadrature weights".into(),
            expected: m,
            found: covariance.nrows(),
        });
    }
    if quadrature_weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidParam {
            name: "quadrature_weights",
            reason: "all weights must be positive".into(),
        });
    }
    if !(pve_target > 0.0 && pve_target <= 1.0) {
        return Err(Error::InvalidParam {
            name: "pve_target",
            reason: format!("must lie in (0, 1], got {pve_target}"),
        });
    }
    let mut max_asym = 0.0f64;
    for r in 0..m {
        for c in (r + 1)..m {
            max_asym = max_asym.max((covariance[(r, c)] - covariance[(c, r)]).abs());
        }
    }
    if max_asym > 1e-8 {
        return Err(Error::NonSymmetric {
            max_asymmetry: max_asym,
        });
    }

    // Transform to the standard symmetric problem B = W^{1/2} G W^{1/2};
    // eigenvectors u of B map back to eigenfunctions phi = W^{-1/2} u,
    // orthonormal in the weighted inner product.
    let sqrt_w: Vec<f64> = quadrature_weights.iter().map(|w| w.sqrt()).collect();
    let mut b = DMatrix::<f64>::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            let sym = 0.5 * (covariance[(r, c)] + covariance[(c, r)]);
            b[(r, c)] = sqrt_w[r] * sym * sqrt_w[c];
        }
    }
    let eig = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());

    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let clamp = 1e-10 * lambda_max;
    let clamped: Vec<f64> = order
        .iter()
        .map(|&i| {
            let l = eig.eigenvalues[i];
            if l < clamp {
                0.0
            } else {
                l
            }
        })
        .collect();
    let total: f64 = clamped.iter().sum();

    let mut eigenvalues = Vec::new();
    let mut eigenfunctions = Vec::new();
    let mut pve_achieved = 1.0;
    if total > 0.0 {
        let mut cum = 0.0;
        for (rank, &l) in clamped.iter().enumerate() {
            if l <= 0.0 {
                break;
            }
            cum += l;
            eigenvalues.push(l);
            let col = eig.eigenvectors.column(order[rank]);
            let mut phi: Vec<f64> = col.iter().zip(&sqrt_w).map(|(u, sw)| u / sw).collect();
            fix_sign(&mut phi);
            eigenfunctions.push(phi);
            if cum / total >= pve_target {
                break;
            }
        }
        pve_achieved = cum / total;
    }

    Ok(EigenSystem {
        grid: Vec::new(),
        mean_curve: vec![0.0; m],
        eigenfunctions,
        eigenvalues,
        pve_achieved,
        quadrature_weights: quadrature_weights.to_vec(),
    })
}

/// Flip so the entry of largest magnitude is positive (first such entry on ties).
fn fix_sign(phi: &mut [f64]) {
    let mut idx = 0;
    let mut best = 0.0f64;
    for (i, v) in phi.iter().enumerate() {
        if v.abs() > best {
            best = v.abs();
            idx = i;
        }
    }
    if phi[idx] < 0.0 {
        for v in phi.iter_mut() {
            *v = -*v;
        }
    }
}

/// Linear interpolation of grid values at an arbitrary time (flat beyond
/// the grid ends).
fn interp_at(grid: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= grid[0] {
        return values[0];
    }
    if t >= *grid.last().unwrap() {
        return *values.last().unwrap();
    }
    let k = match grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
        Ok(i) => return values[i],
        Err(i) => i - 1,
    };
    let frac = (t - grid[k]) / (grid[k + 1] - grid[k]);
    values[k] + frac * (values[k + 1] - values[k])
}

/// Scores for irregularly observed samples: a weighted least-squares
/// projection of the observed values onto the eigenfunctions over each
/// sample's own observation window,
/// `xi_i = (Phi^T W_i Phi)^(-1) Phi^T W_i (z_i - mu)`,
/// with trapezoid weights on the observed times and a minimum-norm SVD
/// solve. For a sample covering the full grid this coincides with the
/// quadrature projection of [`compute_scores`]; for sparse samples it avoids
/// integrating over the flat-extrapolated boundary gaps, where interpolation
/// error concentrates.
pub fn compute_scores_irregular(
    dataset: &FunctionalDataset,
    eigen: &EigenSystem,
) -> Result<ScoreMatrix> {
    let m = eigen.quadrature_weights.len();
    if eigen.grid.len() != m {
        return Err(Error::GridMismatch(
            "eigensystem carries no evaluation grid".into(),
        ));
    }
    let q = eigen.rank();
    let n = dataset.samples.len();
    let mut scores = DMatrix::<f64>::zeros(n, q);
    if q == 0 {
        return Ok(ScoreMatrix {
            covariate_id: dataset.covariate_id.clone(),
            scores,
        });
    }
    // Directions the observation pattern cannot identify (relative singular
    // value below this) are dropped: the solve returns the minimum-norm
    // projection instead of amplifying near-collinear components.
    const SV_CUTOFF: f64 = 0.1;
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.times.len() < 2 {
            return Err(Error::DegenerateSample {
                subject: s.subject_id.clone(),
                found: s.times.len(),
            });
        }
        let w = trapezoid_weights(&s.times);
        let mi = s.times.len();
        let mut a = DMatrix::<f64>::zeros(mi, q);
        let mut b = DVector::<f64>::zeros(mi);
        for (p, &t) in s.times.iter().enumerate() {
            let sw = w[p].sqrt();
            b[p] = sw * (s.values[p] - interp_at(&eigen.grid, &eigen.mean_curve, t));
            for (col, ef) in eigen.eigenfunctions.iter().enumerate() {
                a[(p, col)] = sw * interp_at(&eigen.grid, ef, t);
            }
        }
        let svd = nalgebra::SVD::new(a, true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        if !(smax > 0.0) {
            continue; // zero design: scores stay 0
        }
        let xi = svd
            .solve(&b, SV_CUTOFF * smax)
            .map_err(|_| Error::NumericalFailure {
                block: format!("score projection for subject '{}'", s.subject_id),
            })?;
        for col in 0..q {
            scores[(i, col)] = xi[col];
        }
    }
    Ok(ScoreMatrix {
        covariate_id: dataset.covariate_id.clone(),
        scores,
    })
}

/// Quadrature projections of centered curves onto the eigenfunctions:
/// `xi_iq = sum_m w_m Z_i(s_m) phi_q(s_m)`.
pub fn compute_scores(dataset: &FunctionalDataset, eigen: &EigenSystem) -> Result<ScoreMatrix> {
    let m = eigen.quadrature_weights.len();
    if dataset.common_grid.len() != m {
        return Err(Error::Dimension {
            context: format!("grid of '{}' vs eigensystem", dataset.covariate_id),
            expected: m,
            found: dataset.common_grid.len(),
        });
    }
    ensure_regular(dataset)?;
    let n = dataset.samples.len();
    let q = eigen.rank();
    let mut scores = DMatrix::<f64>::zeros(n, q);
    for (i, s) in dataset.samples.iter().enumerate() {
        for (j, phi) in eigen.eigenfunctions.iter().enumerate() {
            scores[(i, j)] = weighted_inner(&s.values, phi, &eigen.quadrature_weights);
        }
    }
    Ok(ScoreMatrix {
        covariate_id: dataset.covariate_id.clone(),
        scores,
    })
}
