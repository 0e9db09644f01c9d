//! Model definition, validation, and derived matrices for HM-MAR(K,p).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HmmError, Result};
use crate::linalg;

/// Structural tolerance for stochastic-vector and row-sum checks.
pub const STRUCT_TOL: f64 = 1e-12;
/// Fixed-point tolerance for the invariant measure residual.
pub const FIXED_POINT_TOL: f64 = 1e-10;

/// A hidden Markov mixture autoregressive model with K regimes and AR order p.
///
/// Row h of `coeffs` holds `(a_{0,h}, a_{1,h}, ..., a_{p,h})` where `a_{0,h}`
/// is the intercept. `transition[i][j]` is P(Z_t = j | Z_{t-1} = i) and `rho`
/// holds the initial conditional regime probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmMarModel {
    pub k: usize,
    pub p: usize,
    pub coeffs: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
}

/// Outcome of [`HmMarModel::validate`]: one entry per violated invariant.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Diagonal matrices and scalars used by the p = 1 stability analysis.
///
/// Diagonals are stored as vectors; `mu` is the invariant measure of the
/// transition matrix and `lambda` the largest conditional second moment
/// `max_k E[a_{1,Z_t}^2 | Z_{t-1} = k]`.
#[derive(Debug, Clone)]
pub struct DerivedMatrices {
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi1_abs: Vec<f64>,
    pub sigma_diag: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: f64,
}

impl HmMarModel {
    /// Checks every structural invariant, returning a report instead of
    /// aborting. An empty report means the model is well-formed.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let v = &mut report.violations;

        if self.k == 0 {
            v.push("k must be positive".to_string());
            return report;
        }
        if self.coeffs.len() != self.k {
            v.push(format!("coeffs has {} rows, expected {}", self.coeffs.len(), self.k));
        }
        for (h, row) in self.coeffs.iter().enumerate() {
            if row.len() != self.p + 1 {
                v.push(format!(
                    "coeffs[{h}] has {} entries, expected {}",
                    row.len(),
                    self.p + 1
                ));
            }
        }
        if self.sigmas.len() != self.k {
            v.push(format!("sigmas has {} entries, expected {}", self.sigmas.len(), self.k));
        }
        for (h, s) in self.sigmas.iter().enumerate() {
            if !(*s > 0.0) {
                v.push(format!("sigma[{h}] not strictly positive (value {s})"));
            }
        }
        if self.transition.len() != self.k {
            v.push(format!(
                "transition has {} rows, expected {}",
                self.transition.len(),
                self.k
            ));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != self.k {
                v.push(format!("transition row {i} has {} entries, expected {}", row.len(), self.k));
                continue;
            }
            for (j, x) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(x) {
                    v.push(format!("transition[{i}][{j}] = {x} outside [0, 1]"));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STRUCT_TOL {
                v.push(format!("transition row {i} sums to {sum}"));
            }
        }
        if self.rho.len() != self.k {
            v.push(format!("rho has {} entries, expected {}", self.rho.len(), self.k));
        } else {
            for (h, x) in self.rho.iter().enumerate() {
                if !(0.0..=1.0).contains(x) {
                    v.push(format!("rho[{h}] = {x} outside [0, 1]"));
                }
            }
            let sum: f64 = self.rho.iter().sum();
            if (sum - 1.0).abs() > STRUCT_TOL {
                v.push(format!("rho sums to {sum}"));
            }
        }
        report
    }

    /// Validates and converts violations into an error.
    pub fn require_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(HmmError::InvalidModel(report.violations.join("; ")))
        }
    }

    /// Intercept column a_{0,h}.
    pub fn intercepts(&self) -> Vec<f64> {
        self.coeffs.iter().map(|r| r[0]).collect()
    }

    /// Lag-1 column a_{1,h}; requires p >= 1.
    pub fn lag1_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|r| r[1]).collect()
    }

    pub fn transition_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k, |i, j| self.transition[i][j])
    }

    /// Builds the diagonal matrices, invariant measure, and lambda for the
    /// p = 1 stability analysis.
    pub fn derive_matrices(&self) -> Result<DerivedMatrices> {
        self.require_valid()?;
        if self.p != 1 {
            return Err(HmmError::UnsupportedOrder { p: self.p });
        }
        let phi0 = self.intercepts();
        let phi1 = self.lag1_coeffs();
        let phi1_abs: Vec<f64> = phi1.iter().map(|a| a.abs()).collect();
        let mu = stationary_distribution(&self.transition)?;
        // lambda = max_k (P phi1^2 1)_k: the A of the stability analysis is
        // diagonal, so its spectral radius is the largest diagonal entry.
        let lambda = (0..self.k)
            .map(|i| {
                (0..self.k)
                    .map(|j| self.transition[i][j] * phi1[j] * phi1[j])
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(DerivedMatrices {
            phi0,
            phi1,
            phi1_abs,
            sigma_diag: self.sigmas.clone(),
            mu,
            lambda,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HmmError::Parse(format!("model JSON: {e}")))
    }
}

/// Solves mu' P = mu', sum(mu) = 1 for a row-stochastic matrix by dense
/// Gaussian elimination on the augmented system (P' - I with the last row
/// replaced by the normalization constraint).
pub fn stationary_distribution(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = transition.len();
    if k == 0 {
        return Err(HmmError::DimensionMismatch("empty transition matrix".to_string()));
    }
    for row in transition {
        if row.len() != k {
            return Err(HmmError::DimensionMismatch("transition matrix is not square".to_string()));
        }
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    // Rows 0..k-1: (P' - I) mu = 0, last row: sum(mu) = 1.
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k - 1 {
        for j in 0..k {
            a[(i, j)] = transition[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::zeros(k);
    b[k - 1] = 1.0;
    let mu = linalg::solve(&a, &b)
        .ok_or_else(|| HmmError::NonErgodicChain("augmented linear system is singular".to_string()))?;

    // Residual and sign checks catch reducible chains that slip through the
    // solve with a nearly singular system.
    let mut max_resid = 0.0f64;
    for j in 0..k {
        let mut acc = -mu[j];
        for i in 0..k {
            acc += mu[i] * transition[i][j];
        }
        max_resid = max_resid.max(acc.abs());
    }
    if max_resid > FIXED_POINT_TOL {
        return Err(HmmError::NonErgodicChain(format!(
            "fixed-point residual {max_resid:e} exceeds {FIXED_POINT_TOL:e}"
        )));
    }
    if mu.iter().any(|x| *x < -FIXED_POINT_TOL) {
        return Err(HmmError::NonErgodicChain("invariant measure has negative entries".to_string()));
    }
    Ok(mu.iter().map(|x| x.max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(transition: [[f64; 2]; 2]) -> HmMarModel {
        HmMarModel {
            k: 2,
            p: 1,
            coeffs: vec![vec![0.0, 0.7], vec![0.0, 0.5]],
            sigmas: vec![1.0, 1.0],
            transition: transition.iter().map(|r| r.to_vec()).collect(),
            rho: vec![1.0, 0.0],
        }
    }

    #[test]
    fn uniform_model_is_valid() {
        let m = two_state([[0.5, 0.5], [0.5, 0.5]]);
        assert!(m.validate().is_valid());
    }

    #[test]
    fn bad_row_sum_reported() {
        let m = two_state([[0.8, 0.3], [0.5, 0.5]]);
        let report = m.validate();
        assert!(!report.is_valid());
        assert!(report.violations[0].contains("row 0 sums to 1.1"), "{:?}", report.violations);
    }

    #[test]
    fn zero_sigma_reported() {
        let mut m = two_state([[0.5, 0.5], [0.5, 0.5]]);
        m.sigmas = vec![1.0, 0.0];
        let report = m.validate();
        assert!(report.violations.iter().any(|v| v.contains("sigma[1] not strictly positive")));
    }

    #[test]
    fn stationary_identical_rows_is_the_row() {
        let mu = stationary_distribution(&[vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        assert!((mu[0] - 0.3).abs() < 1e-12);
        assert!((mu[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn stationary_two_state_closed_form() {
        // Closed-form oracle: mu = (pi21, pi12) / (pi12 + pi21).
        let (p12, p21) = (0.1923, 0.7619);
        let p = vec![vec![1.0 - p12, p12], vec![p21, 1.0 - p21]];
        let mu = stationary_distribution(&p).unwrap();
        assert!((mu[0] - p21 / (p12 + p21)).abs() < 1e-12);
        assert!((mu[1] - p12 / (p12 + p21)).abs() < 1e-12);
    }

    #[test]
    fn stationary_identity_refused() {
        let err = stationary_distribution(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, HmmError::NonErgodicChain(_)));
    }

    #[test]
    fn derive_matrices_sec4_lambda() {
        // Direct arithmetic oracle on the two-regime reference matrix.
        let m = two_state([[0.8077, 0.1923], [0.7619, 0.2381]]);
        let d = m.derive_matrices().unwrap();
        let expected = (0.8077f64 * 0.49 + 0.1923 * 0.25).max(0.7619 * 0.49 + 0.2381 * 0.25);
        assert!((d.lambda - expected).abs() < 1e-14);
    }

    #[test]
    fn derive_matrices_zero_and_scalar() {
        let mut m = two_state([[0.5, 0.5], [0.5, 0.5]]);
        m.coeffs = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(m.derive_matrices().unwrap().lambda, 0.0);

        let single = HmMarModel {
            k: 1,
            p: 1,
            coeffs: vec![vec![0.0, 0.6]],
            sigmas: vec![1.0],
            transition: vec![vec![1.0]],
            rho: vec![1.0],
        };
        let d = single.derive_matrices().unwrap();
        assert!((d.lambda - 0.36).abs() < 1e-15);
    }

    #[test]
    fn derive_matrices_rejects_p_not_one() {
        let m = HmMarModel {
            k: 1,
            p: 2,
            coeffs: vec![vec![0.0, 0.5, 0.1]],
            sigmas: vec![1.0],
            transition: vec![vec![1.0]],
            rho: vec![1.0],
        };
        assert!(matches!(m.derive_matrices(), Err(HmmError::UnsupportedOrder { p: 2 })));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = two_state([[0.8077, 0.1923], [0.7619, 0.2381]]);
        let back = HmMarModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let text = r#"{"k":1,"p":0,"coeffs":[[0.0]],"sigmas":[1.0],"transition":[[1.0]],"rho":[1.0],"extra":3}"#;
        assert!(HmMarModel::from_json(text).is_err());
    }
}
