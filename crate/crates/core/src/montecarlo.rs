//! Replication harness: simulate, prepare, span, estimate, summarize.

use crate::ajd::ParameterVector;
use crate::error::{Error, Result};
use crate::estimate::{qml_estimate, EstimateOptions};
use crate::simulate::{euler_simulate, replication_seed, synth_market, SimConfig, SyntheticMarket};
use crate::prep::{measure_date, Diagnostic};
use crate::spanning::{CCFMeasurement, SpanOptions};
use crate::statespace::PreparedPanel;
use crate::surface::prepare_slice;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    pub measurements: Vec<CCFMeasurement>,
    /// Index into the market dates of each measurement.
    pub date_index: Vec<usize>,
    pub skipped: Vec<Diagnostic>,
}

/// Spans every date of a synthetic market, using the known forward and OTM quotes.
pub fn market_measurements(market: &SyntheticMarket, u_grid: &[f64], span: &SpanOptions, noisy: bool) -> MarketPanel {
    let per_date: Vec<(Option<CCFMeasurement>, Vec<Diagnostic>)> = market
        .slices
        .par_iter()
        .enumerate()
        .map(|(t, day)| {
            let mut skipped = Vec::new();
            let mut surfaces = Vec::new();
            for s in day {
                let (slice, _) = s.otm_slice(noisy);
                match prepare_slice(&slice) {
                    Ok(ps) => surfaces.push(ps),
                    Err(e) => skipped.push(Diagnostic::new(s.quote_date, Some(s.tenor_days), "surface_failed", e.to_string())),
                }
            }
            let exog: Vec<f64> = if market.paths.h.is_empty() { vec![] } else { vec![market.paths.h[t]] };
            let (m, more) = measure_date(market.paths.dates[t], surfaces, u_grid, span, &exog);
            skipped.extend(more);
            (m, skipped)
        })
        .collect();
    let mut out = MarketPanel { measurements: Vec::new(), date_index: Vec::new(), skipped: Vec::new() };
    for (t, (m, s)) in per_date.into_iter().enumerate() {
        if let Some(m) = m {
            out.measurements.push(m);
            out.date_index.push(t);
        }
        out.skipped.extend(s);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloOptions {
    pub u_grid: Vec<f64>,
    pub span: SpanOptions,
    pub estimate: EstimateOptions,
    /// Use noiseless prices instead of the noisy quotes.
    pub noiseless: bool,
    /// Report the true parameters instead of estimating.
    pub skip_estimation: bool,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        MonteCarloOptions {
            u_grid: (1..=20).map(f64::from).collect(),
            span: SpanOptions::default(),
            estimate: EstimateOptions { compute_se: false, ..EstimateOptions::default() },
            noiseless: false,
            skip_estimation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    /// Values of all parameters (fixed ones included) or `None` when the replication failed.
    pub theta_hat: Option<Vec<f64>>,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub dates_used: usize,
    pub slices_skipped: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub true_value: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub names: Vec<String>,
    pub true_values: Vec<f64>,
    pub replications: Vec<Replication>,
    /// Free parameters only.
    pub summary: Vec<ParameterSummary>,
    pub rmspe: f64,
    pub failed: usize,
}

/// Simulated market and its measurements for one replication seed.
pub fn replication_panel(cfg: &SimConfig, seed: u64, opts: &MonteCarloOptions) -> Result<(SyntheticMarket, MarketPanel)> {
    let paths = euler_simulate(cfg, seed)?;
    let market = synth_market(paths, cfg, seed)?;
    let panel = market_measurements(&market, &opts.u_grid, &opts.span, !opts.noiseless);
    Ok((market, panel))
}

fn estimate_on(truth: &ParameterVector, measurements: &[CCFMeasurement], opts: &MonteCarloOptions, sbar: f64) -> Result<(Vec<f64>, f64, bool)> {
    let panel = PreparedPanel::new(measurements, sbar)?;
    let mut eopts = opts.estimate.clone();
    eopts.filter.sbar = sbar;
    let r = qml_estimate(&panel, truth, &eopts)?;
    Ok((r.theta_hat.values.clone(), r.loglik, r.convergence.converged))
}

fn failed(index: usize, seed: u64, e: &Error) -> Replication {
    Replication { index, seed, theta_hat: None, loglik: None, converged: false, dates_used: 0, slices_skipped: 0, error: Some(e.to_string()) }
}

/// One replication: simulate, span, and estimate starting from the true parameters.
pub fn run_replication(cfg: &SimConfig, index: usize, opts: &MonteCarloOptions) -> Replication {
    let seed = replication_seed(cfg.seed, index as u64);
    let truth = match cfg.parameters() {
        Ok(p) => p,
        Err(e) => return failed(index, seed, &e),
    };
    let (_, mp) = match replication_panel(cfg, seed, opts) {
        Ok(x) => x,
        Err(e) => return failed(index, seed, &e),
    };
    let mut rep = Replication {
        index,
        seed,
        theta_hat: None,
        loglik: None,
        converged: true,
        dates_used: mp.measurements.len(),
        slices_skipped: mp.skipped.len(),
        error: None,
    };
    if opts.skip_estimation {
        rep.theta_hat = Some(truth.values.clone());
        return rep;
    }
    match estimate_on(&truth, &mp.measurements, opts, opts.estimate.filter.sbar) {
        Ok((theta, ll, conv)) => {
            rep.theta_hat = Some(theta);
            rep.loglik = Some(ll);
            rep.converged = conv;
        }
        Err(e) => {
            warn!("replication {index}: {e}");
            rep.converged = false;
            rep.error = Some(e.to_string());
        }
    }
    rep
}

/// Per-parameter statistics and RMSPE over the successful replications.
pub fn summarize(truth: &ParameterVector, replications: Vec<Replication>) -> MonteCarloReport {
    let ok: Vec<&Vec<f64>> = replications.iter().filter_map(|r| r.theta_hat.as_ref()).collect();
    let free = truth.free_indices();
    let summary = free
        .iter()
        .map(|&j| {
            let xs: Vec<f64> = ok.iter().map(|v| v[j]).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            let mut d = Data::new(xs);
            ParameterSummary {
                name: truth.names[j].clone(),
                true_value: truth.values[j],
                mean,
                std_dev: var.sqrt(),
                q10: d.quantile(0.1),
                q50: d.quantile(0.5),
                q90: d.quantile(0.9),
            }
        })
        .collect();
    let rmspe = rmspe(truth, &ok);
    let failed = replications.len() - ok.len();
    MonteCarloReport { names: truth.names.clone(), true_values: truth.values.clone(), replications, summary, rmspe, failed }
}

/// sqrt(N^-1 sum_i sum_j ((theta_ij - theta0_j)/theta0_j)^2) over free parameters with nonzero truth.
pub fn rmspe(truth: &ParameterVector, estimates: &[&Vec<f64>]) -> f64 {
    if estimates.is_empty() {
        return f64::NAN;
    }
    let free: Vec<usize> = truth.free_indices().into_iter().filter(|&j| truth.values[j] != 0.0).collect();
    let total: f64 = estimates.iter().map(|v| free.iter().map(|&j| ((v[j] - truth.values[j]) / truth.values[j]).powi(2)).sum::<f64>()).sum();
    (total / estimates.len() as f64).sqrt()
}

/// Runs `cfg.replications` independent replications in parallel.
pub fn monte_carlo(cfg: &SimConfig, opts: &MonteCarloOptions) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let truth = cfg.parameters()?;
    let reps: Vec<Replication> = (0..cfg.replications)
        .into_par_iter()
        .map(|i| {
            let r = run_replication(cfg, i, opts);
            info!("replication {i} done: {}", r.error.as_deref().unwrap_or("ok"));
            r
        })
        .collect();
    Ok(summarize(&truth, reps))
}

/// Estimates every replication at each threshold level, reusing the simulated measurements.
pub fn threshold_sweep(cfg: &SimConfig, sbars: &[f64], opts: &MonteCarloOptions) -> Result<Vec<(f64, MonteCarloReport)>> {
    cfg.validate()?;
    let truth = cfg.parameters()?;
    let per_rep: Vec<(u64, Result<MarketPanel>)> = (0..cfg.replications)
        .into_par_iter()
        .map(|i| {
            let seed = replication_seed(cfg.seed, i as u64);
            (seed, replication_panel(cfg, seed, opts).map(|x| x.1))
        })
        .collect();
    let out = sbars
        .iter()
        .map(|&sbar| {
            let reps: Vec<Replication> = per_rep
                .par_iter()
                .enumerate()
                .map(|(i, (seed, mp))| match mp {
                    Err(e) => failed(i, *seed, e),
                    Ok(mp) => match estimate_on(&truth, &mp.measurements, opts, sbar) {
                        Ok((theta, ll, conv)) => Replication {
                            index: i,
                            seed: *seed,
                            theta_hat: Some(theta),
                            loglik: Some(ll),
                            converged: conv,
                            dates_used: mp.measurements.len(),
                            slices_skipped: mp.skipped.len(),
                            error: None,
                        },
                        Err(e) => failed(i, *seed, &e),
                    },
                })
                .collect();
            (sbar, summarize(&truth, reps))
        })
        .collect();
    Ok(out)
}
