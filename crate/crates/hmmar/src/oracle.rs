//! Brute-force reference computations for small instances: exhaustive latent
//! path enumeration and the literal unscaled forward recursion. These share
//! no code with the production paths they certify.

use nalgebra::DMatrix;

use crate::error::{HmmError, Result};
use crate::filter::LN_2PI;
use crate::model::HmMarModel;
use crate::sim::Substream;

fn gaussian_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * LN_2PI).exp() / sigma * (-0.5 * z * z).exp()
}

fn regime_mean(model: &HmMarModel, series: &[f64], t: usize, h: usize) -> f64 {
    let row = &model.coeffs[h];
    let mut m = row[0];
    for i in 0..model.p {
        m += row[i + 1] * series[t - 1 - i];
    }
    m
}

/// E[prod_{t=2}^n a_{1,Z_t} | Z_1 = k] by enumerating all K^{n-1} latent
/// paths weighted by their probability.
pub fn enumerate_product_expectation(p: &DMatrix<f64>, a1: &[f64], n: usize) -> Vec<f64> {
    let k = p.nrows();
    let steps = n - 1;
    let mut out = vec![0.0; k];
    for start in 0..k {
        let mut path = vec![0usize; steps];
        loop {
            let mut prob = 1.0;
            let mut prod = 1.0;
            let mut prev = start;
            for &z in &path {
                prob *= p[(prev, z)];
                prod *= a1[z];
                prev = z;
            }
            out[start] += prob * prod;
            // odometer increment over the K^steps paths
            let mut i = 0;
            loop {
                if i == steps {
                    break;
                }
                path[i] += 1;
                if path[i] < k {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
            if i == steps {
                break;
            }
        }
    }
    out
}

/// E[prod_{t=2}^n a_{1,Z_t} a_{0,Z_1}] via the same enumeration.
pub fn enumerate_weighted_product(
    p: &DMatrix<f64>,
    a0: &[f64],
    a1: &[f64],
    mu: &[f64],
    n: usize,
) -> f64 {
    let v = enumerate_product_expectation(p, a1, n);
    mu.iter().zip(a0).zip(&v).map(|((m, c), x)| m * c * x).sum()
}

/// Literal unscaled joint-density recursion: returns the predictive weights
/// alpha_h^(t) for t = p .. n (the weight used to forecast y_t), where the
/// entry for t = p is rho itself.
pub fn unscaled_forward_alphas(model: &HmMarModel, series: &[f64]) -> Vec<Vec<f64>> {
    let k = model.k;
    let p = model.p;
    let n = series.len();
    let mut alphas = vec![model.rho.clone()];
    // F(y_p, Z_p = h | y_0^{p-1})
    let mut joint: Vec<f64> = (0..k)
        .map(|h| model.rho[h] * gaussian_pdf(series[p], regime_mean(model, series, p, h), model.sigmas[h]))
        .collect();
    for t in p + 1..=n {
        let total: f64 = joint.iter().sum();
        let alpha: Vec<f64> = (0..k)
            .map(|h| (0..k).map(|m| joint[m] * model.transition[m][h]).sum::<f64>() / total)
            .collect();
        alphas.push(alpha);
        if t == n {
            break;
        }
        joint = (0..k)
            .map(|h| {
                let dens = gaussian_pdf(series[t], regime_mean(model, series, t, h), model.sigmas[h]);
                (0..k).map(|m| joint[m] * model.transition[m][h]).sum::<f64>() * dens
            })
            .collect();
    }
    alphas
}

/// Marginal density of y_p..y_{n-1} given the prefix, by summing the joint
/// density over all K^{n-p} latent paths.
pub fn path_sum_likelihood(model: &HmMarModel, series: &[f64]) -> f64 {
    let k = model.k;
    let p = model.p;
    let n = series.len();
    let steps = n - p;
    let mut path = vec![0usize; steps];
    let mut total = 0.0;
    loop {
        let mut w = model.rho[path[0]];
        for s in 1..steps {
            w *= model.transition[path[s - 1]][path[s]];
        }
        for s in 0..steps {
            let t = p + s;
            let h = path[s];
            w *= gaussian_pdf(series[t], regime_mean(model, series, t, h), model.sigmas[h]);
        }
        total += w;
        let mut i = 0;
        loop {
            if i == steps {
                break;
            }
            path[i] += 1;
            if path[i] < k {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == steps {
            break;
        }
    }
    total
}

/// Smoothed single and pairwise posteriors by exhaustive path enumeration.
pub fn path_posteriors(model: &HmMarModel, series: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let k = model.k;
    let p = model.p;
    let n = series.len();
    let steps = n - p;
    let mut gamma = vec![vec![0.0; k]; steps];
    let mut xi = vec![vec![vec![0.0; k]; k]; steps - 1];
    let mut path = vec![0usize; steps];
    let mut total = 0.0;
    loop {
        let mut w = model.rho[path[0]];
        for s in 1..steps {
            w *= model.transition[path[s - 1]][path[s]];
        }
        for s in 0..steps {
            let t = p + s;
            let h = path[s];
            w *= gaussian_pdf(series[t], regime_mean(model, series, t, h), model.sigmas[h]);
        }
        total += w;
        for s in 0..steps {
            gamma[s][path[s]] += w;
        }
        for s in 0..steps - 1 {
            xi[s][path[s]][path[s + 1]] += w;
        }
        let mut i = 0;
        loop {
            if i == steps {
                break;
            }
            path[i] += 1;
            if path[i] < k {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == steps {
            break;
        }
    }
    for row in &mut gamma {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    for slice in &mut xi {
        for row in slice.iter_mut() {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
    (gamma, xi)
}

/// A seeded random valid HM-MAR(K,1) model with sub-unit coefficients, used
/// by the oracle grids.
pub fn random_stable_model(k: usize, seed: u64) -> HmMarModel {
    let mut rng = Substream::new(seed, 0x4f52_4143_4c45_0001);
    let coeffs: Vec<Vec<f64>> = (0..k)
        .map(|_| vec![2.0 * rng.next_open01() - 1.0, 1.6 * rng.next_open01() - 0.8])
        .collect();
    let sigmas: Vec<f64> = (0..k).map(|_| 0.5 + 1.5 * rng.next_open01()).collect();
    let transition: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.next_open01()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        })
        .collect();
    let raw_rho: Vec<f64> = (0..k).map(|_| 0.05 + rng.next_open01()).collect();
    let s: f64 = raw_rho.iter().sum();
    let rho = raw_rho.iter().map(|x| x / s).collect();
    HmMarModel {
        k,
        p: 1,
        coeffs,
        sigmas,
        transition,
        rho,
    }
}

/// Summary of one oracle sweep: the worst deviation over the grid.
#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub name: String,
    pub max_deviation: f64,
    pub cases: usize,
}

impl OracleCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_deviation.is_finite() && self.max_deviation <= tol
    }
}

/// Closed-form product expectations vs exhaustive enumeration over K in
/// {2..=k_max}, n in {2..=n_max}, `models` seeded models per K.
/// `flip_phi1_sign` corrupts the closed-form input to verify the check bites.
pub fn check_product_expectations(
    k_max: usize,
    n_max: usize,
    models: usize,
    base_seed: u64,
    flip_phi1_sign: bool,
) -> Result<OracleCheck> {
    if k_max > 3 || n_max > 12 {
        return Err(HmmError::DimensionMismatch(
            "oracle grid is bounded to K <= 3, n <= 12".to_string(),
        ));
    }
    let mut worst = 0.0f64;
    let mut cases = 0;
    for k in 2..=k_max {
        for m_idx in 0..models {
            let model = random_stable_model(k, base_seed ^ ((k as u64) << 32) ^ m_idx as u64);
            let d = model.derive_matrices()?;
            let p = model.transition_matrix();
            let mut phi1 = d.phi1.clone();
            if flip_phi1_sign {
                for a in &mut phi1 {
                    *a = -*a + 0.01;
                }
            }
            for n in 2..=n_max {
                let fast = crate::stability::product_expectation_vector(&p, &phi1, n);
                let slow = enumerate_product_expectation(&p, &d.phi1, n);
                for (a, b) in fast.iter().zip(&slow) {
                    worst = worst.max((a - b).abs());
                }
                let fast_w =
                    crate::stability::weighted_product_expectation(&p, &d.phi0, &phi1, &d.mu, n);
                let slow_w = enumerate_weighted_product(&p, &d.phi0, &d.phi1, &d.mu, n);
                worst = worst.max((fast_w - slow_w).abs());
                cases += 1;
            }
        }
    }
    Ok(OracleCheck {
        name: "closed-form product expectations vs path enumeration".to_string(),
        max_deviation: worst,
        cases,
    })
}

/// Scaled forward filter vs the literal unscaled recursion, and the total
/// log-likelihood vs the full path sum, on seeded simulated series.
pub fn check_forward_filter(
    k_max: usize,
    n_max: usize,
    models: usize,
    base_seed: u64,
) -> Result<OracleCheck> {
    if k_max > 3 || n_max > 12 {
        return Err(HmmError::DimensionMismatch(
            "oracle grid is bounded to K <= 3, n <= 12".to_string(),
        ));
    }
    let mut worst = 0.0f64;
    let mut cases = 0;
    for k in 2..=k_max {
        for m_idx in 0..models {
            let model = random_stable_model(k, base_seed ^ ((k as u64) << 40) ^ m_idx as u64);
            let sim = crate::sim::simulate(
                &model,
                &crate::sim::SimulationConfig::new(n_max, base_seed ^ 0xDA7A ^ m_idx as u64),
            )?;
            let series = sim.values;
            let reference = unscaled_forward_alphas(&model, &series);
            let mut state = crate::filter::init_filter(&model, &series[..model.p])?;
            for (a, b) in state.alpha_predictive.iter().zip(&reference[0]) {
                worst = worst.max((a - b).abs());
            }
            let mut lags = vec![0.0; model.p];
            for t in model.p..series.len() {
                for i in 0..model.p {
                    lags[i] = series[t - 1 - i];
                }
                state = crate::filter::filter_step(&state, &model, series[t], &lags)?;
                let step = t - model.p + 1;
                for (a, b) in state.alpha_predictive.iter().zip(&reference[step]) {
                    worst = worst.max((a - b).abs());
                }
            }
            // Likelihood vs full path sum on a short prefix.
            let short = &series[..8.min(series.len())];
            if short.len() > model.p + 1 {
                let rf = crate::filter::rolling_forecast(&model, short)?;
                let direct = path_sum_likelihood(&model, short);
                let rel = (rf.log_likelihood.exp() - direct).abs() / direct;
                worst = worst.max(rel);
            }
            cases += 1;
        }
    }
    Ok(OracleCheck {
        name: "scaled forward filter vs unscaled recursion / path sum".to_string(),
        max_deviation: worst,
        cases,
    })
}
