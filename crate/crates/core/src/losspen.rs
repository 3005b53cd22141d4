//! Loss functions, penalties, and thresholding operators.
//!
//! The solver works with the Huber-smoothed quantile loss
//! `h_gamma_tau(u) = h_gamma(u) + (2*tau - 1)*u` and its half-derivative
//! `ell`, plus the firm/soft thresholding operators that implement the
//! group MCP and group LASSO updates.

use crate::error::{Error, Result};

/// Quantile level and Huber bandwidth for the smoothed quantile loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub tau: f64,
    pub gamma: f64,
}

impl LossParams {
    pub fn new(tau: f64, gamma: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParam {
                name: "tau",
                reason: format!("must lie in (0, 1), got {tau}"),
            });
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidParam {
                name: "gamma",
                reason: format!("must be positive, got {gamma}"),
            });
        }
        Ok(LossParams { tau, gamma })
    }
}

/// Penalty family used for the group updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PenaltyKind {
    Mcp,
    Lasso,
}

/// Regularization strength, MCP concavity, and penalty family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyParams {
    pub lambda: f64,
    pub phi: f64,
    pub kind: PenaltyKind,
}

impl PenaltyParams {
    pub fn new(lambda: f64, phi: f64, kind: PenaltyKind) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParam {
                name: "lambda",
                reason: format!("must be nonnegative, got {lambda}"),
            });
        }
        if kind == PenaltyKind::Mcp && !(phi > 1.0) {
            return Err(Error::InvalidParam {
                name: "phi",
                reason: format!("MCP concavity must exceed 1, got {phi}"),
            });
        }
        Ok(PenaltyParams { lambda, phi, kind })
    }
}

/// Check (quantile) loss `rho_tau(u) = u * (tau - I(u < 0))`.
///
/// Algebraically equal to `0.5 * (|u| + (2*tau - 1)*u)`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Huber loss: quadratic `u^2 / (2*gamma)` inside the band `|u| <= gamma`,
/// linear `|u| - gamma/2` outside. C^1 at the band edge.
pub fn huber(u: f64, gamma: f64) -> f64 {
    let a = u.abs();
    if a <= gamma {
        u * u / (2.0 * gamma)
    } else {
        a - gamma / 2.0
    }
}

/// Huber-smoothed quantile loss `h_gamma(u) + (2*tau - 1)*u`.
///
/// Reduces to the plain Huber loss at `tau = 0.5`.
pub fn huber_quantile_loss(u: f64, tau: f64, gamma: f64) -> f64 {
    huber(u, gamma) + (2.0 * tau - 1.0) * u
}

/// Half-derivative `ell(r)` of the Huber-quantile loss:
/// `(r/gamma + 2*tau - 1) / 2` inside the band, `(sign(r) + 2*tau - 1) / 2`
/// outside. The factor 1/2 matches the `1/(2n)` scaling of the objective.
pub fn huber_quantile_derivative(r: f64, tau: f64, gamma: f64) -> f64 {
    let s = if r.abs() <= gamma {
        r / gamma
    } else {
        r.signum()
    };
    (s + 2.0 * tau - 1.0) / 2.0
}

/// MCP penalty evaluated at a magnitude `t >= 0`:
/// `lambda*t - t^2/(2*phi)` for `t <= lambda*phi`, constant
/// `0.5*lambda^2*phi` beyond. Continuous, nondecreasing, concave.
pub fn mcp_penalty(t: f64, lambda: f64, phi: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::Domain {
            op: "mcp_penalty",
            reason: format!("magnitude must be nonnegative, got {t}"),
        });
    }
    Ok(mcp_penalty_raw(t, lambda, phi))
}

pub(crate) fn mcp_penalty_raw(t: f64, lambda: f64, phi: f64) -> f64 {
    if t <= lambda * phi {
        lambda * t - t * t / (2.0 * phi)
    } else {
        0.5 * lambda * lambda * phi
    }
}

/// Penalty value for either family at a magnitude `t >= 0`.
pub(crate) fn penalty_value(t: f64, lambda: f64, phi: f64, kind: PenaltyKind) -> f64 {
    match kind {
        PenaltyKind::Lasso => lambda * t,
        PenaltyKind::Mcp => mcp_penalty_raw(t, lambda, phi),
    }
}

/// Soft-thresholding operator `S(z, lambda)`.
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Firm-thresholding operator: `S(z, lambda) / (1 - 1/phi)` for
/// `|z| <= lambda*phi`, identity beyond. Requires `phi > 1`.
pub fn firm_threshold(z: f64, lambda: f64, phi: f64) -> Result<f64> {
    if !(phi > 1.0) {
        return Err(Error::InvalidParam {
            name: "phi",
            reason: format!("firm threshold requires phi > 1, got {phi}"),
        });
    }
    Ok(firm_threshold_raw(z, lambda, phi))
}

pub(crate) fn firm_threshold_raw(z: f64, lambda: f64, phi: f64) -> f64 {
    if z.abs() <= lambda * phi {
        soft_threshold(z, lambda) / (1.0 - 1.0 / phi)
    } else {
        z
    }
}

/// Scalar threshold used in the block update: firm for MCP, soft for LASSO.
pub(crate) fn scalar_threshold(z: f64, lambda: f64, phi: f64, kind: PenaltyKind) -> f64 {
    match kind {
        PenaltyKind::Mcp => firm_threshold_raw(z, lambda, phi),
        PenaltyKind::Lasso => soft_threshold(z, lambda),
    }
}

/// Group thresholding: threshold the Euclidean norm of `v` and rescale.
/// A zero-norm group (or one whose norm thresholds to 0) returns the exact
/// zero vector. `phi` must exceed 1 when `kind` is MCP.
pub fn group_threshold(v: &[f64], lambda: f64, phi: f64, kind: PenaltyKind) -> Vec<f64> {
    debug_assert!(kind == PenaltyKind::Lasso || phi > 1.0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; v.len()];
    }
    let t = scalar_threshold(norm, lambda, phi, kind);
    if t == 0.0 {
        return vec![0.0; v.len()];
    }
    let scale = t / norm;
    v.iter().map(|x| x * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Algebraic form of the check loss, cross-checked against the
    /// indicator form used by the implementation.
    fn check_loss_alt(u: f64, tau: f64) -> f64 {
        0.5 * (u.abs() + (2.0 * tau - 1.0) * u)
    }

    #[test]
    fn check_loss_examples() {
        assert_abs_diff_eq!(check_loss(2.0, 0.5), 1.0);
        assert_abs_diff_eq!(check_loss(-1.0, 0.1), 0.9);
        assert_eq!(check_loss(0.0, 0.3), 0.0);
    }

    #[test]
    fn check_loss_forms_agree() {
        for &tau in &[0.1, 0.3, 0.5, 0.9] {
            let mut u = -5.0;
            while u <= 5.0 {
                assert_abs_diff_eq!(check_loss(u, tau), check_loss_alt(u, tau), epsilon = 1e-12);
                u += 0.037;
            }
        }
    }

    #[test]
    fn huber_examples() {
        assert_abs_diff_eq!(huber(0.1, 0.2), 0.025);
        assert_abs_diff_eq!(huber(1.0, 0.2), 0.9);
        assert_eq!(huber(0.0, 0.7), 0.0);
    }

    #[test]
    fn huber_continuous_at_band_edge() {
        let gamma = 0.2;
        let inner = huber(gamma, gamma);
        let outer = huber(gamma + 1e-12, gamma);
        assert_abs_diff_eq!(inner, outer, epsilon = 1e-10);
        assert_abs_diff_eq!(inner, gamma / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn huber_quantile_examples() {
        assert_abs_diff_eq!(huber_quantile_loss(1.0, 0.9, 0.2), 1.7, epsilon = 1e-15);
        assert_abs_diff_eq!(huber_quantile_loss(-1.0, 0.9, 0.2), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(huber_quantile_loss(1.0, 0.5, 0.2), 0.9, epsilon = 1e-15);
    }

    #[test]
    fn derivative_examples() {
        assert_abs_diff_eq!(huber_quantile_derivative(0.1, 0.5, 0.2), 0.25);
        assert_abs_diff_eq!(huber_quantile_derivative(1.0, 0.5, 0.2), 0.5);
        assert_abs_diff_eq!(huber_quantile_derivative(-1.0, 0.1, 0.2), -0.9);
    }

    #[test]
    fn derivative_continuous_at_band_edge() {
        for &tau in &[0.1, 0.5, 0.9] {
            let gamma = 0.2;
            let below = huber_quantile_derivative(gamma - 1e-13, tau, gamma);
            let at = huber_quantile_derivative(gamma, tau, gamma);
            let above = huber_quantile_derivative(gamma + 1e-13, tau, gamma);
            assert_abs_diff_eq!(below, at, epsilon = 1e-12);
            assert_abs_diff_eq!(above, at, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        // Central differences of u -> h(u)/2 at step 1e-5. The grid spacing
        // is chosen so no evaluation point lands within the step of the band
        // edges +-gamma, where the one-sided curvature jump would dominate.
        let tau = 0.3;
        let gamma = 0.2;
        let h = 1e-5;
        let mut r = -1.0 + 0.0137;
        while r < 1.0 {
            let fd = (huber_quantile_loss(r + h, tau, gamma)
                - huber_quantile_loss(r - h, tau, gamma))
                / (2.0 * h)
                / 2.0;
            let d = huber_quantile_derivative(r, tau, gamma);
            assert!(
                (fd - d).abs() <= 1e-6,
                "finite difference mismatch at r={r}: fd={fd}, d={d}"
            );
            r += 0.0137;
        }
    }

    #[test]
    fn huber_quantile_converges_to_check_loss() {
        // |h_gamma_tau(u)/2 - rho_tau(u)| <= gamma/4 uniformly in u.
        let gamma = 1e-4;
        for &tau in &[0.1, 0.5, 0.9] {
            let mut u = -3.0;
            while u <= 3.0 {
                let diff = (huber_quantile_loss(u, tau, gamma) / 2.0 - check_loss(u, tau)).abs();
                assert!(diff <= gamma / 4.0 + 1e-15, "diff {diff} at u={u}, tau={tau}");
                u += 0.0113;
            }
        }
    }

    #[test]
    fn mcp_examples() {
        assert_eq!(mcp_penalty(0.0, 1.0, 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(mcp_penalty(10.0, 1.0, 3.0).unwrap(), 1.5);
        // Continuity-corrected quadratic branch at t = 0.5.
        assert_abs_diff_eq!(
            mcp_penalty(0.5, 1.0, 3.0).unwrap(),
            0.5 - 0.25 / 6.0,
            epsilon = 1e-12
        );
        assert!(mcp_penalty(-0.1, 1.0, 3.0).is_err());
    }

    #[test]
    fn mcp_matches_integrated_firm_derivative() {
        // P(t) = integral_0^t lambda * (1 - u/(lambda*phi))_+ du, evaluated by
        // Simpson quadrature, must agree with the closed form.
        let lambda = 1.0;
        let phi = 3.0;
        let deriv = |u: f64| lambda * (1.0 - u / (lambda * phi)).max(0.0);
        for &t in &[0.25, 0.5, 1.0, 2.9, 3.0, 4.0, 10.0] {
            let n = 10_000;
            let h = t / n as f64;
            let mut s = deriv(0.0) + deriv(t);
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * deriv(k as f64 * h);
            }
            let quad = s * h / 3.0;
            assert_abs_diff_eq!(mcp_penalty(t, lambda, phi).unwrap(), quad, epsilon = 1e-9);
        }
    }

    #[test]
    fn mcp_continuous_at_lambda_phi() {
        let lambda = 0.7;
        let phi = 2.5;
        let t = lambda * phi;
        let inner = lambda * t - t * t / (2.0 * phi);
        let outer = 0.5 * lambda * lambda * phi;
        assert_abs_diff_eq!(inner, outer, epsilon = 1e-12);
        assert_abs_diff_eq!(
            mcp_penalty(t, lambda, phi).unwrap(),
            outer,
            epsilon = 1e-12
        );
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
    }

    #[test]
    fn firm_threshold_examples() {
        assert_eq!(firm_threshold(0.5, 1.0, 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(firm_threshold(2.0, 1.0, 3.0).unwrap(), 1.5);
        assert_eq!(firm_threshold(-4.0, 1.0, 3.0).unwrap(), -4.0);
        assert!(firm_threshold(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn firm_threshold_no_penalty_identity() {
        for &z in &[-2.0, -0.3, 0.0, 0.7, 5.0] {
            assert_eq!(firm_threshold(z, 0.0, 3.0).unwrap(), z);
        }
    }

    #[test]
    fn firm_approaches_soft_for_large_phi() {
        let mut z = -10.0;
        while z <= 10.0 {
            let f = firm_threshold(z, 1.0, 1e8).unwrap();
            let s = soft_threshold(z, 1.0);
            assert!((f - s).abs() <= 1e-6, "z={z}: firm={f}, soft={s}");
            z += 0.23;
        }
    }

    #[test]
    fn group_threshold_examples() {
        let out = group_threshold(&[3.0, 4.0], 1.0, 3.0, PenaltyKind::Mcp);
        assert_eq!(out, vec![3.0, 4.0]);

        let out = group_threshold(&[0.6, 0.8], 1.0, 3.0, PenaltyKind::Mcp);
        assert_eq!(out, vec![0.0, 0.0]);

        let out = group_threshold(&[1.2, 1.6], 1.0, 3.0, PenaltyKind::Mcp);
        assert_abs_diff_eq!(out[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 1.2, epsilon = 1e-12);
    }

    #[test]
    fn group_threshold_zero_vector() {
        let out = group_threshold(&[0.0, 0.0, 0.0], 1.0, 3.0, PenaltyKind::Mcp);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn group_threshold_rotation_invariant_norm() {
        // The output norm depends on the input only through its norm.
        let v = [1.3, -0.4, 2.2];
        let angles = [0.3f64, 1.1, 2.7];
        for &a in &angles {
            let (c, s) = (a.cos(), a.sin());
            // Rotate in the (0, 1) plane.
            let rv = [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
            let t1 = group_threshold(&v, 1.5, 3.0, PenaltyKind::Mcp);
            let t2 = group_threshold(&rv, 1.5, 3.0, PenaltyKind::Mcp);
            let n1 = t1.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n2 = t2.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n1, n2, epsilon = 1e-10);
        }
    }

    #[test]
    fn loss_params_validation() {
        assert!(LossParams::new(0.5, 0.2).is_ok());
        assert!(LossParams::new(0.0, 0.2).is_err());
        assert!(LossParams::new(1.0, 0.2).is_err());
        assert!(LossParams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn penalty_params_validation() {
        assert!(PenaltyParams::new(0.0, 3.0, PenaltyKind::Mcp).is_ok());
        assert!(PenaltyParams::new(-1.0, 3.0, PenaltyKind::Mcp).is_err());
        assert!(PenaltyParams::new(1.0, 1.0, PenaltyKind::Mcp).is_err());
        assert!(PenaltyParams::new(1.0, 1.0, PenaltyKind::Lasso).is_ok());
    }
}
