//! Moment-stability analysis for HM-MAR(K,1): spectral-radius certificates,
//! the closed-form limiting mean, and upper bounds on the limiting second
//! moment and variance.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{HmmError, Result};
use crate::linalg;
use crate::model::{DerivedMatrices, HmMarModel};

/// Radii within this band of 1 are treated as boundary-indeterminate: the
/// certificate flags stay false but no violation is claimed either.
pub const RADIUS_BAND: f64 = 1e-12;
/// Condition-number threshold above which a warning attaches to the report.
pub const COND_WARN: f64 = 1e12;

#[derive(Debug, Clone, Serialize)]
pub struct StabilityFlags {
    pub theorem1_applicable: bool,
    pub theorem2_applicable: bool,
    pub theorem3_applicable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub mu: Vec<f64>,
    pub rho_pphi1: f64,
    pub rho_pphi1_sq: f64,
    pub rho_pphi1_abs: f64,
    pub lambda: f64,
    pub mean_limit: Option<f64>,
    pub mean_limit_reason: Option<String>,
    pub second_moment_bound: Option<f64>,
    pub second_moment_bound_reason: Option<String>,
    pub variance_bound: Option<f64>,
    pub variance_bound_reason: Option<String>,
    pub flags: StabilityFlags,
    /// Radii inside the band [1 - 1e-12, 1 + 1e-12], where eigenvalue noise
    /// could flip a certificate.
    pub boundary_indeterminate: bool,
    pub condition_warning: Option<String>,
}

/// (P phi1)^{n-1} 1 by repeated matrix-vector products: the vector of
/// conditional expectations E[prod_{t=2}^n a_{1,Z_t} | Z_1 = k].
pub fn product_expectation_vector(p: &DMatrix<f64>, phi1: &[f64], n: usize) -> Vec<f64> {
    let k = p.nrows();
    let mut v = DVector::from_element(k, 1.0);
    for _ in 0..n - 1 {
        for (x, a) in v.iter_mut().zip(phi1) {
            *x *= a;
        }
        v = p * v;
    }
    v.iter().copied().collect()
}

/// mu' phi0 (P phi1)^{n-1} 1: the expectation of the weighted coefficient
/// product when the chain starts from its invariant measure.
pub fn weighted_product_expectation(
    p: &DMatrix<f64>,
    phi0: &[f64],
    phi1: &[f64],
    mu: &[f64],
    n: usize,
) -> f64 {
    let v = product_expectation_vector(p, phi1, n);
    mu.iter().zip(phi0).zip(&v).map(|((m, a0), x)| m * a0 * x).sum()
}

fn radius_ok(radius: f64) -> bool {
    radius < 1.0 - RADIUS_BAND
}

/// Limiting unconditional mean mu' phi0 (I - P phi1)^{-1} 1, defined when the
/// spectral radius of P phi1 is inside the unit circle.
pub fn limiting_mean(d: &DerivedMatrices, p: &DMatrix<f64>) -> Result<f64> {
    let pphi1 = linalg::times_diag(p, &d.phi1);
    let radius = linalg::spectral_radius(&pphi1);
    if !radius_ok(radius) {
        return Err(HmmError::ConditionViolated {
            condition: "spectral radius of P*phi1 must be < 1".to_string(),
            value: radius,
        });
    }
    let k = p.nrows();
    let a = DMatrix::identity(k, k) - pphi1;
    let x = linalg::solve(&a, &DVector::from_element(k, 1.0))
        .ok_or_else(|| HmmError::ConditionViolated {
            condition: "(I - P*phi1) is singular".to_string(),
            value: radius,
        })?;
    Ok(d.mu.iter().zip(&d.phi0).zip(&x).map(|((m, a0), xi)| m * a0 * xi).sum())
}

/// Upper bound on the limiting second moment:
/// 2((1 + mu' phi0^2 1) / (1 - sqrt(lambda)))^2 + mu' sigma^2 (I - P phi1^2)^{-1} 1.
pub fn second_moment_bound(d: &DerivedMatrices, p: &DMatrix<f64>) -> Result<f64> {
    if d.lambda >= 1.0 - RADIUS_BAND {
        return Err(HmmError::ConditionViolated {
            condition: "lambda must be < 1".to_string(),
            value: d.lambda,
        });
    }
    let phi1_sq: Vec<f64> = d.phi1.iter().map(|a| a * a).collect();
    let pphi1sq = linalg::times_diag(p, &phi1_sq);
    let radius = linalg::spectral_radius(&pphi1sq);
    if !radius_ok(radius) {
        return Err(HmmError::ConditionViolated {
            condition: "spectral radius of P*phi1^2 must be < 1".to_string(),
            value: radius,
        });
    }
    let k = p.nrows();
    let a = DMatrix::identity(k, k) - pphi1sq;
    let x = linalg::solve(&a, &DVector::from_element(k, 1.0))
        .ok_or_else(|| HmmError::ConditionViolated {
            condition: "(I - P*phi1^2) is singular".to_string(),
            value: radius,
        })?;
    let mu_phi0sq: f64 = d.mu.iter().zip(&d.phi0).map(|(m, a0)| m * a0 * a0).sum();
    let noise_term: f64 = d
        .mu
        .iter()
        .zip(&d.sigma_diag)
        .zip(&x)
        .map(|((m, s), xi)| m * s * s * xi)
        .sum();
    let head = (1.0 + mu_phi0sq) / (1.0 - d.lambda.sqrt());
    Ok(2.0 * head * head + noise_term)
}

/// Variance bound: second-moment bound minus squared mean limit.
pub fn variance_bound(d: &DerivedMatrices, p: &DMatrix<f64>) -> Result<f64> {
    let ml = limiting_mean(d, p)?;
    let smb = second_moment_bound(d, p)?;
    Ok(smb - ml * ml)
}

/// Full stability report for a p = 1 model.
pub fn analyze(model: &HmMarModel) -> Result<StabilityReport> {
    if model.p != 1 {
        return Err(HmmError::UnsupportedOrder { p: model.p });
    }
    let d = model.derive_matrices()?;
    let p = model.transition_matrix();
    let phi1_sq: Vec<f64> = d.phi1.iter().map(|a| a * a).collect();
    let pphi1 = linalg::times_diag(&p, &d.phi1);
    let pphi1sq = linalg::times_diag(&p, &phi1_sq);
    let pphi1abs = linalg::times_diag(&p, &d.phi1_abs);
    let rho_pphi1 = linalg::spectral_radius(&pphi1);
    let rho_pphi1_sq = linalg::spectral_radius(&pphi1sq);
    let rho_pphi1_abs = linalg::spectral_radius(&pphi1abs);

    let in_band =
        |r: f64| (r - 1.0).abs() <= RADIUS_BAND;
    let boundary_indeterminate =
        in_band(rho_pphi1) || in_band(rho_pphi1_sq) || in_band(rho_pphi1_abs) || in_band(d.lambda);

    let theorem1_applicable = radius_ok(rho_pphi1) && radius_ok(rho_pphi1_sq);
    let theorem2_applicable = theorem1_applicable && d.lambda < 1.0 - RADIUS_BAND;
    let theorem3_applicable = theorem2_applicable && radius_ok(rho_pphi1_abs);

    let (mean_limit, mean_limit_reason) = match limiting_mean(&d, &p) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (second_moment_bound_v, second_moment_bound_reason) = match second_moment_bound(&d, &p) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (variance_bound_v, variance_bound_reason) = match (mean_limit, second_moment_bound_v) {
        (Some(ml), Some(smb)) => (Some(smb - ml * ml), None),
        _ => (
            None,
            Some("requires both the mean limit and the second-moment bound".to_string()),
        ),
    };

    let k = model.k;
    let mut condition_warning = None;
    for (name, m) in [("I - P*phi1", &pphi1), ("I - P*phi1^2", &pphi1sq)] {
        let a = DMatrix::identity(k, k) - m;
        let cond = linalg::condition_inf(&a);
        if cond > COND_WARN {
            condition_warning = Some(format!(
                "{name} has estimated condition number {cond:.3e}; bounds may be inaccurate"
            ));
            break;
        }
    }

    Ok(StabilityReport {
        mu: d.mu.clone(),
        rho_pphi1,
        rho_pphi1_sq,
        rho_pphi1_abs,
        lambda: d.lambda,
        mean_limit,
        mean_limit_reason,
        second_moment_bound: second_moment_bound_v,
        second_moment_bound_reason,
        variance_bound: variance_bound_v,
        variance_bound_reason,
        flags: StabilityFlags {
            theorem1_applicable,
            theorem2_applicable,
            theorem3_applicable,
        },
        boundary_indeterminate,
        condition_warning,
    })
}
