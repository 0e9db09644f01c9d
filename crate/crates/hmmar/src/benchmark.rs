//! Forecast-error benchmark: simulate from a true model, fit both the full
//! HM-MAR and the iid-weight MAR baseline on each replicate, and compare
//! total one-step absolute forecast errors.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::estimate::{fit, FitConfig, FitMode};
use crate::filter::rolling_forecast;
use crate::model::HmMarModel;
use crate::sim::{simulate, SimulationConfig};

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    /// Total absolute one-step error of the fitted HM-MAR; None if that fit
    /// failed.
    pub hmmar_error: Option<f64>,
    pub mar_error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkResult {
    pub rows: Vec<ReplicateRow>,
    /// Replicates where both fits succeeded and HM-MAR beat MAR.
    pub wins: usize,
    pub completed: usize,
    pub hmmar_mean: f64,
    pub hmmar_sd: f64,
    pub mar_mean: f64,
    pub mar_sd: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub replicates: usize,
    pub n: usize,
    pub seed: u64,
    pub restarts: usize,
    pub k: usize,
    pub p: usize,
}

fn run_replicate(truth: &HmMarModel, cfg: &BenchmarkConfig, r: usize) -> ReplicateRow {
    let seed = cfg.seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(r as u64);
    let sim = match simulate(truth, &SimulationConfig::new(cfg.n, seed)) {
        Ok(s) => s,
        Err(e) => {
            return ReplicateRow {
                replicate: r,
                seed,
                hmmar_error: None,
                mar_error: None,
                failure: Some(format!("simulation failed: {e}")),
            }
        }
    };
    let fit_one = |mode: FitMode| -> std::result::Result<f64, String> {
        let mut fc = FitConfig::new(cfg.k, cfg.p, mode, seed);
        fc.restarts = cfg.restarts;
        let fitted = fit(&sim.values, &fc).map_err(|e| e.to_string())?;
        let rf = rolling_forecast(&fitted.model, &sim.values).map_err(|e| e.to_string())?;
        Ok(rf.total_abs_error)
    };
    let hmmar = fit_one(FitMode::Hmm);
    let mar = fit_one(FitMode::Iid);
    let failure = match (&hmmar, &mar) {
        (Err(a), Err(b)) => Some(format!("hmm: {a}; iid: {b}")),
        (Err(a), _) => Some(format!("hmm: {a}")),
        (_, Err(b)) => Some(format!("iid: {b}")),
        _ => None,
    };
    ReplicateRow {
        replicate: r,
        seed,
        hmmar_error: hmmar.ok(),
        mar_error: mar.ok(),
        failure,
    }
}

/// Runs the benchmark. Replicates execute concurrently with per-replicate
/// seeds; aggregation is in replicate order, so the output is deterministic.
pub fn run_benchmark(truth: &HmMarModel, cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    truth.require_valid()?;
    let mut rows: Vec<ReplicateRow> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(truth, cfg, r))
        .collect();
    rows.sort_by_key(|row| row.replicate);

    let paired: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.hmmar_error?, r.mar_error?)))
        .collect();
    let wins = paired.iter().filter(|(h, m)| h < m).count();
    let completed = paired.len();
    let stats = |xs: &[f64]| -> (f64, f64) {
        if xs.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (hmmar_mean, hmmar_sd) = stats(&paired.iter().map(|x| x.0).collect::<Vec<_>>());
    let (mar_mean, mar_sd) = stats(&paired.iter().map(|x| x.1).collect::<Vec<_>>());
    Ok(BenchmarkResult {
        rows,
        wins,
        completed,
        hmmar_mean,
        hmmar_sd,
        mar_mean,
        mar_sd,
    })
}

/// CSV rendering of the per-replicate table plus a summary block.
pub fn benchmark_to_csv(result: &BenchmarkResult) -> String {
    use crate::io::fmt_f64;
    let mut out = String::from("replicate,seed,hmmar_error,mar_error,status\n");
    for row in &result.rows {
        let h = row.hmmar_error.map(fmt_f64).unwrap_or_else(|| "failed".to_string());
        let m = row.mar_error.map(fmt_f64).unwrap_or_else(|| "failed".to_string());
        let status = row.failure.as_deref().unwrap_or("ok").replace(',', ";");
        out.push_str(&format!("{},{},{},{},{}\n", row.replicate, row.seed, h, m, status));
    }
    out.push_str(&format!(
        "# wins={} completed={} hmmar_mean={} hmmar_sd={} mar_mean={} mar_sd={}\n",
        result.wins,
        result.completed,
        fmt_f64(result.hmmar_mean),
        fmt_f64(result.hmmar_sd),
        fmt_f64(result.mar_mean),
        fmt_f64(result.mar_sd),
    ));
    out
}
