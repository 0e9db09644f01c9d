//! Scaled forward filter: time-varying mixture weights alpha_h^(t) and the
//! one-step conditional mean/variance they induce.
//!
//! The joint-density recursion underflows geometrically in t, so the filter
//! normalizes at every step and accumulates the log of the normalizer. The
//! weights are identical to the unscaled recursion's.
//!
//! Lag ordering convention throughout: `lags[0]` is y_{t-1}, `lags[p-1]` is
//! y_{t-p} (newest first).

use crate::error::{HmmError, Result};
use crate::model::HmMarModel;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Standard normal distribution function, |error| <= 1e-12.
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Log density of N(mean, sigma^2) at x.
pub fn gaussian_log_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
}

/// Filtered and predictive regime probabilities after absorbing observations
/// up to index `t`, plus the accumulated conditional log-likelihood.
#[derive(Debug, Clone)]
pub struct ForwardState {
    /// Index of the last observation absorbed; p - 1 right after init.
    pub t: i64,
    /// P(Z_t = h | y_0..y_t).
    pub alpha_filtered: Vec<f64>,
    /// alpha_h^(t+1) = P(Z_{t+1} = h | y_0..y_t).
    pub alpha_predictive: Vec<f64>,
    /// log of the marginal density of y_p..y_t given y_0..y_{p-1}.
    pub log_likelihood: f64,
}

/// One-step predictive mean and variance of the mixture.
#[derive(Debug, Clone)]
pub struct ConditionalForecast {
    /// mu_{h,t} = a_{0,h} + a_{1,h} y_{t-1} + ... + a_{p,h} y_{t-p}.
    pub regime_means: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

/// Per-regime conditional means for the given lag window (newest first).
pub fn regime_means(model: &HmMarModel, lags: &[f64]) -> Vec<f64> {
    model
        .coeffs
        .iter()
        .map(|row| {
            let mut m = row[0];
            for i in 0..model.p {
                m += row[i + 1] * lags[i];
            }
            m
        })
        .collect()
}

/// Starts the recursion: the predictive weights for the first modeled index
/// t = p are the initial probabilities rho, and no likelihood has accrued.
pub fn init_filter(model: &HmMarModel, prefix: &[f64]) -> Result<ForwardState> {
    if prefix.len() != model.p {
        return Err(HmmError::DimensionMismatch(format!(
            "prefix has {} observations, model order p = {}",
            prefix.len(),
            model.p
        )));
    }
    Ok(ForwardState {
        t: model.p as i64 - 1,
        alpha_filtered: model.rho.clone(),
        alpha_predictive: model.rho.clone(),
        log_likelihood: 0.0,
    })
}

/// Absorbs one observation. `lags` are the p most recent observations before
/// `y_new`, newest first.
pub fn filter_step(
    state: &ForwardState,
    model: &HmMarModel,
    y_new: f64,
    lags: &[f64],
) -> Result<ForwardState> {
    let k = model.k;
    let t = state.t + 1;
    if lags.len() != model.p {
        return Err(HmmError::DimensionMismatch(format!(
            "lags has {} entries, model order p = {}",
            lags.len(),
            model.p
        )));
    }
    let means = regime_means(model, lags);
    // Log-space update shifted by the max keeps the step well defined for
    // any finite data.
    let mut log_w = vec![f64::NEG_INFINITY; k];
    let mut max_lw = f64::NEG_INFINITY;
    for h in 0..k {
        let lw = state.alpha_predictive[h].ln() + gaussian_log_pdf(y_new, means[h], model.sigmas[h]);
        log_w[h] = lw;
        if lw > max_lw {
            max_lw = lw;
        }
    }
    if !max_lw.is_finite() {
        return Err(HmmError::NumericalUnderflow { t });
    }
    let mut filtered = vec![0.0; k];
    let mut norm = 0.0;
    for h in 0..k {
        let w = (log_w[h] - max_lw).exp();
        filtered[h] = w;
        norm += w;
    }
    for w in &mut filtered {
        *w /= norm;
    }
    let log_likelihood = state.log_likelihood + max_lw + norm.ln();

    let mut predictive = vec![0.0; k];
    for h in 0..k {
        for m in 0..k {
            predictive[h] += filtered[m] * model.transition[m][h];
        }
    }
    Ok(ForwardState {
        t,
        alpha_filtered: filtered,
        alpha_predictive: predictive,
        log_likelihood,
    })
}

/// One-step predictive distribution using the state's predictive weights.
pub fn forecast_one_step(
    state: &ForwardState,
    model: &HmMarModel,
    lags: &[f64],
) -> ConditionalForecast {
    let means = regime_means(model, lags);
    let alpha = &state.alpha_predictive;
    let mean: f64 = alpha.iter().zip(&means).map(|(a, m)| a * m).sum();
    let second: f64 = alpha
        .iter()
        .zip(&means)
        .zip(&model.sigmas)
        .map(|((a, m), s)| a * (s * s + m * m))
        .sum();
    ConditionalForecast {
        regime_means: means,
        mean,
        variance: second - mean * mean,
    }
}

/// Rolling one-step forecasts over a series, with per-step absolute errors.
#[derive(Debug, Clone)]
pub struct RollingForecast {
    /// Forecast for y_t, for t in [p, n).
    pub forecasts: Vec<ConditionalForecast>,
    pub abs_errors: Vec<f64>,
    pub total_abs_error: f64,
    pub log_likelihood: f64,
}

/// Runs the filter over `series`, forecasting each y_t from data up to t - 1.
pub fn rolling_forecast(model: &HmMarModel, series: &[f64]) -> Result<RollingForecast> {
    let p = model.p;
    let n = series.len();
    if n < p + 1 {
        return Err(HmmError::InsufficientData(format!(
            "series has {n} observations, need at least p + 1 = {}",
            p + 1
        )));
    }
    let mut state = init_filter(model, &series[..p])?;
    let mut forecasts = Vec::with_capacity(n - p);
    let mut abs_errors = Vec::with_capacity(n - p);
    let mut total = 0.0;
    let mut lags = vec![0.0; p];
    for t in p..n {
        for i in 0..p {
            lags[i] = series[t - 1 - i];
        }
        let fc = forecast_one_step(&state, model, &lags);
        let err = (series[t] - fc.mean).abs();
        forecasts.push(fc);
        abs_errors.push(err);
        total += err;
        state = filter_step(&state, model, series[t], &lags)?;
    }
    Ok(RollingForecast {
        forecasts,
        abs_errors,
        total_abs_error: total,
        log_likelihood: state.log_likelihood,
    })
}
