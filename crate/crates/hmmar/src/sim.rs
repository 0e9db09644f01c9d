//! Seedable, counter-based simulation of HM-MAR sample paths and
//! cross-sectional ensemble statistics.
//!
//! The generator ("smx64-ctr v1") evaluates the splitmix64 output function at
//! key + counter * gamma, so every draw is addressable and the byte stream is
//! identical across platforms. The latent chain and the Gaussian innovations
//! consume two separate substreams derived from the master seed, which makes
//! the independence of the noise from the hidden process structural.

use crate::error::{HmmError, Result};
use crate::filter::gaussian_cdf;
use crate::model::HmMarModel;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
/// Substream ids for the chain and the innovation noise.
pub const STREAM_CHAIN: u64 = 0x4348_4149_4e00_0001;
pub const STREAM_NOISE: u64 = 0x4e4f_4953_4500_0002;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform stream: draw i depends only on (seed, stream, i).
#[derive(Debug, Clone)]
pub struct Substream {
    key: u64,
    counter: u64,
}

impl Substream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Substream {
            key: mix(seed ^ mix(stream)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.key.wrapping_add(self.counter.wrapping_add(1).wrapping_mul(GAMMA)));
        self.counter += 1;
        out
    }

    /// Uniform on the open interval (0, 1), safe to feed to the inverse cdf.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via the inverse distribution function, refined by
    /// Newton iteration on `gaussian_cdf` to 1e-14.
    pub fn next_normal(&mut self) -> f64 {
        inverse_gaussian_cdf(self.next_open01())
    }

    /// Categorical draw from a probability vector.
    pub fn next_categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.next_open01();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Inverse standard normal cdf: rational initial guess (Acklam) polished by
/// Newton steps until |Phi(x) - u| / pdf(x) falls below 1e-14.
pub fn inverse_gaussian_cdf(u: f64) -> f64 {
    debug_assert!(u > 0.0 && u < 1.0);
    let mut x = acklam_guess(u);
    for _ in 0..8 {
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf == 0.0 {
            break;
        }
        let dx = (gaussian_cdf(x) - u) / pdf;
        x -= dx;
        if dx.abs() <= 1e-14 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

fn acklam_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// How to draw the first latent regime.
#[derive(Debug, Clone, PartialEq)]
pub enum RegimeInit {
    /// Draw Z_p from the model's rho.
    Rho,
    /// Start in a fixed regime.
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    /// Observations to emit after the prefix.
    pub n: usize,
    pub seed: u64,
    /// y_0..y_{p-1}; zeros when empty.
    pub initial_lags: Vec<f64>,
    pub initial_regime_law: RegimeInit,
    pub emit_latent: bool,
}

impl SimulationConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        SimulationConfig {
            n,
            seed,
            initial_lags: Vec::new(),
            initial_regime_law: RegimeInit::Rho,
            emit_latent: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub values: Vec<f64>,
    pub regimes: Vec<usize>,
}

/// Draws a sample path: regimes follow the transition matrix, observations
/// follow the regime's AR recursion with iid standard normal innovations.
pub fn simulate(model: &HmMarModel, config: &SimulationConfig) -> Result<Simulation> {
    model.require_valid()?;
    if config.n == 0 {
        return Err(HmmError::DimensionMismatch("n must be at least 1".to_string()));
    }
    if let RegimeInit::Fixed(z) = config.initial_regime_law {
        if z >= model.k {
            return Err(HmmError::DimensionMismatch(format!(
                "fixed regime {z} outside [0, {})",
                model.k
            )));
        }
    }
    let p = model.p;
    let mut lags = vec![0.0; p];
    for (i, y) in config.initial_lags.iter().enumerate() {
        if i >= p {
            return Err(HmmError::DimensionMismatch(format!(
                "initial_lags has {} entries, model order p = {p}",
                config.initial_lags.len()
            )));
        }
        // initial_lags is y_0..y_{p-1}; lags is newest first.
        lags[p - 1 - i] = *y;
    }

    let mut chain = Substream::new(config.seed, STREAM_CHAIN);
    let mut noise = Substream::new(config.seed, STREAM_NOISE);

    let mut regimes = Vec::with_capacity(config.n);
    let mut values = Vec::with_capacity(config.n);
    let mut z = match config.initial_regime_law {
        RegimeInit::Fixed(z) => z,
        RegimeInit::Rho => chain.next_categorical(&model.rho),
    };
    for t in 0..config.n {
        if t > 0 {
            z = chain.next_categorical(&model.transition[z]);
        }
        let row = &model.coeffs[z];
        let mut y = row[0];
        for i in 0..p {
            y += row[i + 1] * lags[i];
        }
        y += model.sigmas[z] * noise.next_normal();
        regimes.push(z);
        values.push(y);
        if p > 0 {
            lags.rotate_right(1);
            lags[0] = y;
        }
    }
    Ok(Simulation { values, regimes })
}

/// Cross-sectional statistics of an ensemble of equally long replicates.
/// Variances use the population convention (divisor R).
#[derive(Debug, Clone)]
pub struct EnsembleMoments {
    pub mean_t: Vec<f64>,
    pub var_t: Vec<f64>,
    /// Number of trailing indices averaged for the tail quantities.
    pub tail_window: usize,
    pub tail_mean: f64,
    pub tail_second_moment: f64,
    pub tail_variance: f64,
    /// Per-replicate averages over the tail window, for Monte Carlo
    /// standard-error computations.
    pub tail_replicate_means: Vec<f64>,
    pub tail_replicate_second_moments: Vec<f64>,
}

pub fn empirical_moments(ensemble: &[Vec<f64>]) -> Result<EnsembleMoments> {
    let r = ensemble.len();
    if r < 2 {
        return Err(HmmError::DimensionMismatch(format!("ensemble has {r} replicates, need >= 2")));
    }
    let n = ensemble[0].len();
    if ensemble.iter().any(|row| row.len() != n) {
        return Err(HmmError::DimensionMismatch("replicates have unequal lengths".to_string()));
    }
    let rf = r as f64;
    let mut mean_t = vec![0.0; n];
    let mut var_t = vec![0.0; n];
    for t in 0..n {
        let mut s = 0.0;
        let mut s2 = 0.0;
        for row in ensemble {
            s += row[t];
            s2 += row[t] * row[t];
        }
        let m = s / rf;
        mean_t[t] = m;
        var_t[t] = s2 / rf - m * m;
    }
    let tail_window = (n / 10).max(10).min(n);
    let start = n - tail_window;
    let wf = tail_window as f64;
    let tail_mean = mean_t[start..].iter().sum::<f64>() / wf;
    let tail_variance = var_t[start..].iter().sum::<f64>() / wf;
    let tail_second_moment = mean_t[start..]
        .iter()
        .zip(&var_t[start..])
        .map(|(m, v)| v + m * m)
        .sum::<f64>()
        / wf;
    let tail_replicate_means: Vec<f64> = ensemble
        .iter()
        .map(|row| row[start..].iter().sum::<f64>() / wf)
        .collect();
    let tail_replicate_second_moments: Vec<f64> = ensemble
        .iter()
        .map(|row| row[start..].iter().map(|y| y * y).sum::<f64>() / wf)
        .collect();
    Ok(EnsembleMoments {
        mean_t,
        var_t,
        tail_window,
        tail_mean,
        tail_second_moment,
        tail_variance,
        tail_replicate_means,
        tail_replicate_second_moments,
    })
}
