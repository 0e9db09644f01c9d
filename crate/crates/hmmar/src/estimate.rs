//! EM fitting with a Baum-Welch E-step: scaled forward-backward smoothing,
//! per-regime weighted least squares in the M-step, and multi-restart search.
//!
//! `iid` mode constrains all transition rows to be equal, which is the
//! classical mixture autoregression used as the comparison baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{HmmError, Result};
use crate::filter::gaussian_log_pdf;
use crate::linalg;
use crate::model::HmMarModel;
use crate::sim::Substream;

const SIGMA_FLOOR: f64 = 1e-6;
const RESP_FLOOR: f64 = 1e-8;
const STREAM_FIT: u64 = 0x4649_5400_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Full transition matrix (HM-MAR).
    Hmm,
    /// All transition rows constrained equal (MAR).
    Iid,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub k: usize,
    pub p: usize,
    pub mode: FitMode,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(k: usize, p: usize, mode: FitMode, seed: u64) -> Self {
        FitConfig {
            k,
            p,
            mode,
            max_iter: 500,
            tol: 1e-8,
            restarts: 10,
            seed,
        }
    }
}

/// Smoothed posteriors from one forward-backward pass.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// gamma[s][h] = P(Z_{p+s} = h | y_0..y_{n-1}), s in [0, n-p).
    pub gamma: Vec<Vec<f64>>,
    /// xi[s][i][j] = P(Z_{p+s} = i, Z_{p+s+1} = j | y_0..y_{n-1}).
    pub xi: Vec<Vec<Vec<f64>>>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: HmMarModel,
    pub loglik_trace: Vec<f64>,
    pub smoothed: Vec<Vec<f64>>,
    pub pairwise: Vec<Vec<Vec<f64>>>,
    pub converged: bool,
    pub iterations_used: usize,
    pub restart_index: usize,
}

/// Shifted emission weights: b[s][h] = exp(logpdf - shift[s]) so each row has
/// max 1; the shifts are added back into the log-likelihood.
fn emission_table(model: &HmMarModel, series: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = model.p;
    let t_len = series.len() - p;
    let mut b = vec![vec![0.0; model.k]; t_len];
    let mut shift = vec![0.0; t_len];
    let mut lags = vec![0.0; p];
    for s in 0..t_len {
        let t = p + s;
        for i in 0..p {
            lags[i] = series[t - 1 - i];
        }
        let means = crate::filter::regime_means(model, &lags);
        let mut max_lw = f64::NEG_INFINITY;
        let mut lw = vec![0.0; model.k];
        for h in 0..model.k {
            lw[h] = gaussian_log_pdf(series[t], means[h], model.sigmas[h]);
            max_lw = max_lw.max(lw[h]);
        }
        shift[s] = max_lw;
        for h in 0..model.k {
            b[s][h] = (lw[h] - max_lw).exp();
        }
    }
    (b, shift)
}

/// Scaled forward-backward pass over the whole series.
pub fn forward_backward(model: &HmMarModel, series: &[f64]) -> Result<Posteriors> {
    model.require_valid()?;
    let p = model.p;
    let k = model.k;
    let n = series.len();
    if n < p + 2 {
        return Err(HmmError::InsufficientData(format!(
            "series has {n} observations, need at least p + 2 = {}",
            p + 2
        )));
    }
    let t_len = n - p;
    let (b, shift) = emission_table(model, series);

    let mut fwd = vec![vec![0.0; k]; t_len];
    let mut scale = vec![0.0; t_len];
    for h in 0..k {
        fwd[0][h] = model.rho[h] * b[0][h];
    }
    for s in 0..t_len {
        if s > 0 {
            for h in 0..k {
                let mut acc = 0.0;
                for m in 0..k {
                    acc += fwd[s - 1][m] * model.transition[m][h];
                }
                fwd[s][h] = acc * b[s][h];
            }
        }
        let c: f64 = fwd[s].iter().sum();
        if c <= 0.0 || !c.is_finite() {
            return Err(HmmError::NumericalUnderflow { t: (p + s) as i64 });
        }
        scale[s] = c;
        for h in 0..k {
            fwd[s][h] /= c;
        }
    }
    let log_likelihood: f64 = scale.iter().map(|c| c.ln()).sum::<f64>() + shift.iter().sum::<f64>();

    let mut bwd = vec![vec![1.0; k]; t_len];
    for s in (0..t_len - 1).rev() {
        for m in 0..k {
            let mut acc = 0.0;
            for h in 0..k {
                acc += model.transition[m][h] * b[s + 1][h] * bwd[s + 1][h];
            }
            bwd[s][m] = acc / scale[s + 1];
        }
    }

    let mut gamma = vec![vec![0.0; k]; t_len];
    for s in 0..t_len {
        let mut sum = 0.0;
        for h in 0..k {
            gamma[s][h] = fwd[s][h] * bwd[s][h];
            sum += gamma[s][h];
        }
        for h in 0..k {
            gamma[s][h] /= sum;
        }
    }

    let mut xi = vec![vec![vec![0.0; k]; k]; t_len - 1];
    for s in 0..t_len - 1 {
        let mut sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                let v = fwd[s][i] * model.transition[i][j] * b[s + 1][j] * bwd[s + 1][j]
                    / scale[s + 1];
                xi[s][i][j] = v;
                sum += v;
            }
        }
        for i in 0..k {
            for j in 0..k {
                xi[s][i][j] /= sum;
            }
        }
    }

    Ok(Posteriors {
        gamma,
        xi,
        log_likelihood,
    })
}

/// One EM iteration. Returns the updated model together with the
/// log-likelihood of the *input* model (the E-step value).
pub fn em_step(model: &HmMarModel, series: &[f64], mode: FitMode) -> Result<(HmMarModel, f64)> {
    let post = forward_backward(model, series)?;
    let updated = m_step(model, series, &post, mode)?;
    Ok((updated, post.log_likelihood))
}

fn m_step(
    model: &HmMarModel,
    series: &[f64],
    post: &Posteriors,
    mode: FitMode,
) -> Result<HmMarModel> {
    let p = model.p;
    let k = model.k;
    let t_len = series.len() - p;
    let dim = p + 1;

    let mut coeffs = vec![vec![0.0; dim]; k];
    let mut sigmas = vec![0.0; k];
    let mut x_row = vec![0.0; dim];
    for h in 0..k {
        let total_resp: f64 = (0..t_len).map(|s| post.gamma[s][h]).sum();
        if total_resp < RESP_FLOOR {
            return Err(HmmError::DegenerateRegime {
                regime: h,
                reason: format!("responsibility mass {total_resp:e} below {RESP_FLOOR:e}"),
            });
        }
        let mut a = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for s in 0..t_len {
            let t = p + s;
            x_row[0] = 1.0;
            for i in 0..p {
                x_row[i + 1] = series[t - 1 - i];
            }
            let w = post.gamma[s][h];
            for r in 0..dim {
                rhs[r] += w * x_row[r] * series[t];
                for c in 0..dim {
                    a[(r, c)] += w * x_row[r] * x_row[c];
                }
            }
        }
        let beta = linalg::solve(&a, &rhs).ok_or_else(|| HmmError::DegenerateRegime {
            regime: h,
            reason: "weighted normal equations are singular".to_string(),
        })?;
        let mut wsse = 0.0;
        for s in 0..t_len {
            let t = p + s;
            let mut pred = beta[0];
            for i in 0..p {
                pred += beta[i + 1] * series[t - 1 - i];
            }
            let r = series[t] - pred;
            wsse += post.gamma[s][h] * r * r;
        }
        coeffs[h] = beta;
        sigmas[h] = (wsse / total_resp).sqrt().max(SIGMA_FLOOR);
    }

    let transition = match mode {
        FitMode::Hmm => {
            let mut rows = vec![vec![0.0; k]; k];
            for i in 0..k {
                for s in 0..t_len - 1 {
                    for j in 0..k {
                        rows[i][j] += post.xi[s][i][j];
                    }
                }
                let den: f64 = rows[i].iter().sum();
                if den < RESP_FLOOR {
                    return Err(HmmError::DegenerateRegime {
                        regime: i,
                        reason: format!("no transition mass out of regime {i}"),
                    });
                }
                for j in 0..k {
                    rows[i][j] /= den;
                }
            }
            rows
        }
        FitMode::Iid => {
            let mut weights = vec![0.0; k];
            for s in 0..t_len {
                for j in 0..k {
                    weights[j] += post.gamma[s][j];
                }
            }
            let den: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= den;
            }
            vec![weights; k]
        }
    };

    Ok(HmMarModel {
        k,
        p,
        coeffs,
        sigmas,
        transition,
        rho: post.gamma[0].clone(),
    })
}

/// Pooled AR(p) least squares: coefficients, residual standard deviation, and
/// coefficient standard errors. This is both the K = 1 estimator and the seed
/// for the restart initializations.
fn pooled_ols(series: &[f64], p: usize) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let n = series.len();
    let t_len = n - p;
    let dim = p + 1;
    let mut a = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let mut x_row = vec![0.0; dim];
    for t in p..n {
        x_row[0] = 1.0;
        for i in 0..p {
            x_row[i + 1] = series[t - 1 - i];
        }
        for r in 0..dim {
            rhs[r] += x_row[r] * series[t];
            for c in 0..dim {
                a[(r, c)] += x_row[r] * x_row[c];
            }
        }
    }
    let beta = linalg::solve(&a, &rhs).ok_or_else(|| HmmError::DegenerateRegime {
        regime: 0,
        reason: "pooled normal equations are singular (degenerate series)".to_string(),
    })?;
    let mut sse = 0.0;
    for t in p..n {
        let mut pred = beta[0];
        for i in 0..p {
            pred += beta[i + 1] * series[t - 1 - i];
        }
        sse += (series[t] - pred) * (series[t] - pred);
    }
    let dof = (t_len.saturating_sub(dim)).max(1) as f64;
    let s2 = sse / dof;
    let inv = a.try_inverse().ok_or_else(|| HmmError::DegenerateRegime {
        regime: 0,
        reason: "pooled normal equations are singular".to_string(),
    })?;
    let se: Vec<f64> = (0..dim).map(|j| (s2 * inv[(j, j)]).sqrt()).collect();
    Ok((beta, s2.sqrt().max(SIGMA_FLOOR), se))
}

fn initial_model(
    config: &FitConfig,
    pooled: &(Vec<f64>, f64, Vec<f64>),
    rng: &mut Substream,
) -> HmMarModel {
    let (beta, sd, se) = pooled;
    let k = config.k;
    let dim = config.p + 1;
    let mut coeffs = vec![vec![0.0; dim]; k];
    for row in coeffs.iter_mut() {
        for j in 0..dim {
            row[j] = beta[j] + 0.25 * se[j] * rng.next_normal();
        }
    }
    // Noise scales spread geometrically over [0.5, 2] around the pooled fit.
    let sigmas: Vec<f64> = (0..k)
        .map(|h| {
            let f = if k == 1 {
                1.0
            } else {
                0.5 * 4.0f64.powf(h as f64 / (k - 1) as f64)
            };
            (sd * f).max(SIGMA_FLOOR)
        })
        .collect();
    let mut transition = vec![vec![0.0; k]; k];
    for i in 0..k {
        if k == 1 {
            transition[i][0] = 1.0;
            continue;
        }
        let mut off: Vec<f64> = (0..k - 1).map(|_| rng.next_open01()).collect();
        let off_sum: f64 = off.iter().sum();
        for o in &mut off {
            *o *= 0.2 / off_sum;
        }
        let mut oi = 0;
        for j in 0..k {
            if j == i {
                transition[i][j] = 0.8;
            } else {
                transition[i][j] = off[oi];
                oi += 1;
            }
        }
    }
    let transition = if config.mode == FitMode::Iid {
        vec![vec![1.0 / k as f64; k]; k]
    } else {
        transition
    };
    HmMarModel {
        k,
        p: config.p,
        coeffs,
        sigmas,
        transition,
        rho: vec![1.0 / k as f64; k],
    }
}

struct RestartOutcome {
    model: HmMarModel,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
    final_post: Posteriors,
}

fn run_restart(
    series: &[f64],
    config: &FitConfig,
    start: HmMarModel,
) -> Result<RestartOutcome> {
    let mut model = start;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..config.max_iter {
        let (next, ll) = em_step(&model, series, config.mode)?;
        iterations = iter + 1;
        if let Some(&prev) = trace.last() {
            if ll - prev < config.tol {
                trace.push(ll);
                model = next;
                converged = true;
                break;
            }
        }
        trace.push(ll);
        model = next;
    }
    let final_post = forward_backward(&model, series)?;
    trace.push(final_post.log_likelihood);
    Ok(RestartOutcome {
        model,
        trace,
        converged,
        iterations,
        final_post,
    })
}

/// Multi-restart EM. Restarts use decorrelated seeds; the winner is the
/// restart with the highest final log-likelihood (ties go to the lowest
/// restart index). Fitted regimes are canonicalized by ascending a_{1,h},
/// ties broken by ascending sigma_h.
pub fn fit(series: &[f64], config: &FitConfig) -> Result<FitResult> {
    let n = series.len();
    let min_n = (config.p + 1) * config.k + 5;
    if n < min_n {
        return Err(HmmError::InsufficientData(format!(
            "series has {n} observations, need at least (p+1)*K + 5 = {min_n}"
        )));
    }
    let pooled = match pooled_ols(series, config.p) {
        Ok(v) => v,
        Err(e) => {
            return Err(HmmError::AllRestartsFailed(
                config.restarts,
                format!("pooled initialization failed: {e}"),
            ))
        }
    };

    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut failures = Vec::new();
    for r in 0..config.restarts {
        let mut rng = Substream::new(config.seed, STREAM_FIT ^ r as u64);
        let start = initial_model(config, &pooled, &mut rng);
        let outcome = match run_restart(series, config, start) {
            Ok(o) => Ok(o),
            Err(HmmError::DegenerateRegime { .. }) => {
                // One reseed before the restart is declared failed.
                let start = initial_model(config, &pooled, &mut rng);
                run_restart(series, config, start)
            }
            Err(e) => Err(e),
        };
        match outcome {
            Ok(o) => {
                let ll = *o.trace.last().unwrap();
                let better = match &best {
                    None => true,
                    Some((_, b)) => ll > *b.trace.last().unwrap(),
                };
                if better {
                    best = Some((r, o));
                }
            }
            Err(e) => failures.push(format!("restart {r}: {e}")),
        }
    }
    let (restart_index, outcome) = best.ok_or_else(|| {
        HmmError::AllRestartsFailed(config.restarts, failures.join("\n"))
    })?;
    let (model, gamma, xi) = canonicalize(outcome.model, outcome.final_post.gamma, outcome.final_post.xi);
    Ok(FitResult {
        model,
        loglik_trace: outcome.trace,
        smoothed: gamma,
        pairwise: xi,
        converged: outcome.converged,
        iterations_used: outcome.iterations,
        restart_index,
    })
}

/// Sorts regimes into the canonical label order and permutes every
/// regime-indexed quantity accordingly.
fn canonicalize(
    model: HmMarModel,
    gamma: Vec<Vec<f64>>,
    xi: Vec<Vec<Vec<f64>>>,
) -> (HmMarModel, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let k = model.k;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        // Sort key: a_{1,h} then sigma_h; intercept when p = 0.
        let key = |h: usize| {
            if model.p >= 1 {
                (model.coeffs[h][1], model.sigmas[h])
            } else {
                (model.coeffs[h][0], model.sigmas[h])
            }
        };
        key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal)
    });
    let coeffs = order.iter().map(|&h| model.coeffs[h].clone()).collect();
    let sigmas = order.iter().map(|&h| model.sigmas[h]).collect();
    let rho = order.iter().map(|&h| model.rho[h]).collect();
    let transition = order
        .iter()
        .map(|&i| order.iter().map(|&j| model.transition[i][j]).collect())
        .collect();
    let gamma = gamma
        .into_iter()
        .map(|row| order.iter().map(|&h| row[h]).collect())
        .collect();
    let xi = xi
        .into_iter()
        .map(|slice: Vec<Vec<f64>>| {
            order
                .iter()
                .map(|&i| order.iter().map(|&j| slice[i][j]).collect())
                .collect()
        })
        .collect();
    (
        HmMarModel {
            k,
            p: model.p,
            coeffs,
            sigmas,
            transition,
            rho,
        },
        gamma,
        xi,
    )
}
